//! The declarative run configuration: one TOML document with a section per
//! pipeline stage. Every section is optional and falls back to defaults;
//! unknown keys anywhere are rejected.

use std::path::Path;

use anyhow::{ensure, Context, Result};
use psmscan::action_log::CascadeParams;
use psmscan::causal::CausalConfig;
use psmscan::classify::{ClassifierSpec, FeatureScaling, ThresholdRule};
use psmscan::community::LouvainOptions;
use psmscan::decay::DecayConfig;
use psmscan::eval::TimelinessConfig;
use psmscan::features::{FeatureMode, FeatureSpec};
use psmscan::synth::SynthConfig;
use psmscan::Metric;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub input: InputSection,
    pub cascade: CascadeParams,
    pub causal: CausalConfig,
    pub decay: DecayConfig,
    pub classify: ClassifySection,
    pub louvain: LouvainOptions,
    pub evaluate: EvaluateSection,
    pub timeline: TimelinessConfig,
    pub ttest: TTestSection,
    pub synth: SynthConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InputSection {
    /// Collapse repeated `(user, message)` pairs to their earliest posting.
    pub dedup: bool,
}

impl Default for InputSection {
    fn default() -> Self {
        InputSection { dedup: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifySection {
    pub k: usize,
    pub scaling: FeatureScaling,
    /// Score used by the threshold classifier.
    pub metric: Metric,
    /// Feature family computed by `timeline`.
    pub features: FeatureMode,
    pub threshold: ThresholdRule,
}

impl Default for ClassifySection {
    fn default() -> Self {
        ClassifySection {
            k: 10,
            scaling: FeatureScaling::default(),
            metric: Metric::Rel,
            features: FeatureMode::Decay,
            threshold: ThresholdRule::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateSection {
    pub folds: usize,
    pub seed: u64,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        EvaluateSection { folds: 10, seed: 42 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TTestSection {
    pub alpha: f64,
    /// Seeds the draw of one outside-community partner per user.
    pub seed: u64,
}

impl Default for TTestSection {
    fn default() -> Self {
        TTestSection { alpha: 0.01, seed: 42 }
    }
}

/// Which classifier a command should build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ClassifierKind {
    Threshold,
    Knn,
    C2dc,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        self.cascade.validate()?;
        self.causal.validate()?;
        self.decay.validate()?;
        self.classify.threshold.validate()?;
        self.timeline.validate()?;
        self.synth.validate()?;
        ensure!(self.classify.k >= 1, "classify.k must be at least 1");
        ensure!(self.evaluate.folds >= 2, "evaluate.folds must be at least 2");
        ensure!(
            self.ttest.alpha > 0.0 && self.ttest.alpha < 1.0,
            "ttest.alpha must lie in (0, 1), got {}",
            self.ttest.alpha
        );
        Ok(())
    }

    pub fn features(&self, mode: FeatureMode) -> FeatureSpec {
        FeatureSpec {
            mode,
            params: self.cascade,
            causal: self.causal,
            decay: self.decay.clone(),
        }
    }

    pub fn classifier(&self, kind: ClassifierKind) -> ClassifierSpec {
        let c = &self.classify;
        match kind {
            ClassifierKind::Threshold => ClassifierSpec::Threshold {
                metric: c.metric,
                rule: c.threshold,
            },
            ClassifierKind::Knn => ClassifierSpec::Knn {
                k: c.k,
                scaling: c.scaling,
            },
            ClassifierKind::C2dc => ClassifierSpec::C2dc {
                k: c.k,
                scaling: c.scaling,
                louvain: self.louvain,
            },
        }
    }
}
