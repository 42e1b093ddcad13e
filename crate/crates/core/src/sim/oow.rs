//! Scheduling of out-of-workflow instructions for the simulated user.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::runtime::action::{OowAnnotation, OowKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OowSchedule {
    /// 1-based user-turn indices.
    Turns(Vec<usize>),
    /// Independent per-turn firing probability.
    Probability(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OowSpec {
    /// `None` draws one of the three kinds at each firing.
    #[serde(default)]
    pub kind: Option<OowKind>,
    pub schedule: OowSchedule,
    /// Overrides the default instruction for the kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subtype: Option<String>,
}

impl OowSpec {
    pub fn at_turns(kind: OowKind, turns: Vec<usize>) -> Self {
        Self {
            kind: Some(kind),
            schedule: OowSchedule::Turns(turns),
            instruction_text: None,
            subtype: None,
        }
    }

    pub fn with_probability(p: f64) -> Self {
        Self {
            kind: None,
            schedule: OowSchedule::Probability(p),
            instruction_text: None,
            subtype: None,
        }
    }
}

pub fn default_instruction(kind: OowKind) -> &'static str {
    match kind {
        OowKind::IntentSwitching => {
            "In this round, you can change one of the details you already gave (such as a time, date or name) or switch to a different request."
        }
        OowKind::ProcedureJumping => {
            "In this round, you can skip ahead and ask about a later step before the current one is finished, or go back and revise an earlier step."
        }
        OowKind::IrrelevantAnswering => {
            "In this round, you can ask a question unrelated to the current topic."
        }
    }
}

/// A fired instruction and the annotation recorded on the user turn.
#[derive(Debug, Clone, PartialEq)]
pub struct OowFiring {
    pub annotation: OowAnnotation,
    pub instruction: String,
}

/// Stateful, seeded evaluator of an [`OowSpec`].
#[derive(Debug, Clone)]
pub struct OowInjector {
    spec: OowSpec,
    rng: ChaCha8Rng,
}

impl OowInjector {
    pub fn new(spec: OowSpec, seed: u64) -> Self {
        Self {
            spec,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Decides whether turn `turn_index` (1-based) carries an instruction.
    /// Call once per turn, in order.
    pub fn fire(&mut self, turn_index: usize) -> Option<OowFiring> {
        let fired = match &self.spec.schedule {
            OowSchedule::Turns(t) => t.contains(&turn_index),
            OowSchedule::Probability(p) => {
                let draw: f64 = self.rng.random();
                draw < *p
            }
        };
        if !fired {
            return None;
        }
        let kind = match self.spec.kind {
            Some(k) => k,
            None => OowKind::ALL[self.rng.random_range(0..OowKind::ALL.len())],
        };
        Some(firing(kind, self.spec.subtype.clone(), self.spec.instruction_text.as_deref()))
    }
}

pub fn firing(kind: OowKind, subtype: Option<String>, instruction: Option<&str>) -> OowFiring {
    OowFiring {
        annotation: OowAnnotation { kind, subtype },
        instruction: instruction.unwrap_or(default_instruction(kind)).to_string(),
    }
}

/// Stateless form: index schedules only, probabilistic ones use `seed`.
pub fn inject_oow(spec: &OowSpec, turn_index: usize, seed: u64) -> Option<String> {
    let mut inj = OowInjector::new(spec.clone(), seed);
    let mut last = None;
    for t in 1..=turn_index {
        last = inj.fire(t);
    }
    last.map(|f| f.instruction)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_schedule() {
        let spec = OowSpec::at_turns(OowKind::IrrelevantAnswering, vec![5]);
        assert!(inject_oow(&spec, 4, 0).is_none());
        let text = inject_oow(&spec, 5, 0).unwrap();
        assert!(text.contains("ask a question unrelated to the current topic"));
    }

    #[test]
    fn zero_probability_never_fires() {
        let mut inj = OowInjector::new(OowSpec::with_probability(0.0), 3);
        assert!((1..=1000).all(|t| inj.fire(t).is_none()));
    }

    #[test]
    fn seeded_pattern_repeats() {
        let pattern = |seed| {
            let mut inj = OowInjector::new(OowSpec::with_probability(0.5), seed);
            (1..=100).map(|t| inj.fire(t).map(|f| f.annotation.kind)).collect::<Vec<_>>()
        };
        let a = pattern(11);
        assert_eq!(a, pattern(11));
        assert_ne!(a, pattern(12));
        let fired = a.iter().flatten().count();
        assert!((25..=75).contains(&fired), "{fired}");
    }
}
