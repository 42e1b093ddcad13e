//! Workflow agent engine.

pub mod baselines;
pub mod config;
pub mod controllers;
pub mod eval;
pub mod pdl;
pub mod run;
pub mod runtime;
#[cfg(feature = "server")]
pub mod service;
pub mod sim;
