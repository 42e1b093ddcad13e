//! User simulation: profiles, out-of-workflow injection and full
//! simulated sessions.

pub mod oow;
pub mod profile;
pub mod session;
pub mod user;

pub use oow::{inject_oow, OowFiring, OowInjector, OowSchedule, OowSpec};
pub use profile::UserProfile;
pub use session::{run_session, SimConfig, SimulatedSession};
pub use user::{UserSimulator, UserTurn};
