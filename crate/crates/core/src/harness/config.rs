use std::path::Path;

use serde::{Deserialize, Serialize};

use super::classifier::ClassifierConfig;
use crate::corpus::FrequencyInterval;
use crate::error::{Error, Result};
use crate::extraction::{DEFAULT_RIDGE_LAMBDA, DEFAULT_STEALER_FEATURE_DIM};
use crate::transforms::TransformSpec;
use crate::verification::{VerificationMode, DEFAULT_PROBE_COUNT};
use crate::watermark::{DEFAULT_MAX_TRIGGERS, DEFAULT_THRESHOLD, DEFAULT_TRIGGER_COUNT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub num_texts: usize,
    pub num_classes: usize,
    pub vocab_size: usize,
    pub text_len: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            num_texts: 5000,
            num_classes: 4,
            vocab_size: 2000,
            text_len: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WatermarkSettings {
    pub n: usize,
    pub m: usize,
    pub interval: FrequencyInterval,
    pub threshold_tau: f64,
}

impl Default for WatermarkSettings {
    fn default() -> Self {
        Self {
            n: DEFAULT_TRIGGER_COUNT,
            m: DEFAULT_MAX_TRIGGERS,
            interval: FrequencyInterval::default(),
            threshold_tau: DEFAULT_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StealerKind {
    Linear {
        ridge_lambda: f64,
    },
    Mlp {
        hidden_size: usize,
        epochs: usize,
        learning_rate: f64,
        batch_size: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StealerConfig {
    pub feature_dim: usize,
    #[serde(flatten)]
    pub kind: StealerKind,
}

impl Default for StealerConfig {
    fn default() -> Self {
        Self {
            feature_dim: DEFAULT_STEALER_FEATURE_DIM,
            kind: StealerKind::Linear {
                ridge_lambda: DEFAULT_RIDGE_LAMBDA,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    /// No watermark at all.
    Original,
    /// Rare-token backdoor that returns the target outright.
    RedAlarm,
    /// Trigger-weighted watermark.
    EmbMarker,
}

impl std::str::FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(Self::Original),
            "redalarm" => Ok(Self::RedAlarm),
            "embmarker" => Ok(Self::EmbMarker),
            _ => Err(Error::InvalidConfig(format!(
                "unknown baseline {s:?}; expected original, redalarm or embmarker"
            ))),
        }
    }
}

/// Everything needed to replay one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub corpus: CorpusConfig,
    pub dim: usize,
    pub feature_dim: usize,
    pub watermark: WatermarkSettings,
    pub stealer: StealerConfig,
    pub probe_count: usize,
    pub attack: TransformSpec,
    pub verification: VerificationMode,
    /// Text whose provider embedding serves as the target in modified mode;
    /// the first general-corpus document when unset.
    pub target_sample: Option<String>,
    pub baseline: Baseline,
    pub measure_utility: bool,
    pub trigger_curve: bool,
    pub classifier: ClassifierConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            corpus: CorpusConfig::default(),
            dim: crate::embedder::DEFAULT_DIM,
            feature_dim: crate::embedder::DEFAULT_FEATURE_DIM,
            watermark: WatermarkSettings::default(),
            stealer: StealerConfig::default(),
            probe_count: DEFAULT_PROBE_COUNT,
            attack: TransformSpec::Identity,
            verification: VerificationMode::Base,
            target_sample: None,
            baseline: Baseline::EmbMarker,
            measure_utility: true,
            trigger_curve: true,
            classifier: ClassifierConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let c = &self.corpus;
        if c.num_texts == 0 || c.num_classes == 0 || c.vocab_size == 0 || c.text_len == 0 {
            return Err(Error::InvalidConfig("corpus sizes must be positive".into()));
        }
        if self.dim == 0 || self.feature_dim == 0 || self.stealer.feature_dim == 0 {
            return Err(Error::InvalidConfig("dimensions must be positive".into()));
        }
        let w = &self.watermark;
        if w.m == 0 {
            return Err(Error::InvalidConfig("m must be at least 1".into()));
        }
        if !(w.threshold_tau > 0.0 && w.threshold_tau < 1.0) {
            return Err(Error::InvalidConfig("threshold must lie in (0, 1)".into()));
        }
        w.interval.validate()?;
        if self.probe_count == 0 {
            return Err(Error::InvalidConfig("probe count must be positive".into()));
        }
        match self.stealer.kind {
            StealerKind::Linear { ridge_lambda } if ridge_lambda.is_nan() || ridge_lambda < 0.0 => {
                Err(Error::InvalidConfig(
                    "ridge lambda must be non-negative".into(),
                ))
            }
            StealerKind::Mlp {
                hidden_size,
                epochs,
                batch_size,
                ..
            } if hidden_size == 0 || epochs == 0 || batch_size == 0 => {
                Err(Error::InvalidConfig("MLP sizes must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let cfg: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }
}
