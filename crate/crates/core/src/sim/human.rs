use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::trust::{intervention_probability, TrustParams};

/// Who answers reallocation requests.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HumanModel {
    /// Decisions arrive from outside (HTTP or a caller of `Session::decide`).
    Interactive,
    /// Allow with the intervention probability of the triggering robot's trust.
    #[default]
    Stochastic,
    /// Allow iff the triggering robot's expected trust is at least `theta`.
    Threshold { theta: f64 },
    /// Answers in order; requests past the end are denied.
    Scripted { decisions: Vec<bool> },
}

/// How a recorded decision was produced, enough to reproduce it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DecisionSource {
    Interactive,
    Stochastic { probability: f64, draw: f64 },
    Threshold { theta: f64, trust: f64 },
    Scripted { index: usize },
}

impl DecisionSource {
    pub fn consumes_draw(&self) -> bool {
        matches!(self, DecisionSource::Stochastic { .. })
    }
}

/// Automatic answer of a non-interactive model; `None` for `Interactive`.
pub(super) fn automatic_decision(
    model: &HumanModel,
    trust_now: f64,
    trust_prev: f64,
    script_pos: &mut usize,
    rng: &mut ChaCha8Rng,
    params: &TrustParams,
) -> Option<(bool, DecisionSource)> {
    match model {
        HumanModel::Interactive => None,
        HumanModel::Stochastic => {
            let probability = intervention_probability(trust_now, trust_prev, params);
            let draw: f64 = rng.random();
            Some((draw < probability, DecisionSource::Stochastic { probability, draw }))
        }
        HumanModel::Threshold { theta } => Some((
            trust_now >= *theta,
            DecisionSource::Threshold {
                theta: *theta,
                trust: trust_now,
            },
        )),
        HumanModel::Scripted { decisions } => {
            let index = *script_pos;
            *script_pos += 1;
            Some((decisions.get(index).copied().unwrap_or(false), DecisionSource::Scripted { index }))
        }
    }
}
