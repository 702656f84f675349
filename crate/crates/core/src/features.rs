//! Per-user feature vectors for classification: plain causality scores or
//! their time-decayed counterparts.

use serde::{Deserialize, Serialize};

use crate::action_log::{ActionLog, CascadeParams, Timestamp};
use crate::causal::{causality_vectors, CausalConfig, CausalityVector};
use crate::classify::{GroundTruth, LabeledUser};
use crate::decay::{decay_vectors, DecayConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    Causal,
    #[default]
    Decay,
}

impl std::str::FromStr for FeatureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "causal" => Ok(FeatureMode::Causal),
            "decay" => Ok(FeatureMode::Decay),
            other => Err(Error::config(format!("unknown feature mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub mode: FeatureMode,
    pub params: CascadeParams,
    pub causal: CausalConfig,
    pub decay: DecayConfig,
}

impl FeatureSpec {
    /// Vectors of every user over `[start, end]`.
    pub fn compute(&self, log: &ActionLog, interval: (Timestamp, Timestamp)) -> Result<Vec<CausalityVector>> {
        match self.mode {
            FeatureMode::Causal => causality_vectors(log, Some(interval), self.params, self.causal),
            FeatureMode::Decay => decay_vectors(log, interval, self.params, self.causal, &self.decay),
        }
    }
}

/// Labeled users that posted at least once in `log`, in user order.
pub fn labeled_users(log: &ActionLog, vectors: &[CausalityVector], truth: &GroundTruth) -> Vec<LabeledUser> {
    vectors
        .iter()
        .filter(|v| log.user_action_count(v.user) > 0)
        .filter_map(|v| truth.get(v.user).map(|label| LabeledUser::new(v, label)))
        .collect()
}
