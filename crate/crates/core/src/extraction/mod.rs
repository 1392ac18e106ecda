//! The stealer: regresses its own text features onto embeddings bought from a
//! victim service.

mod linear;
mod mlp;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use linear::fit_linear;
pub use mlp::{fit_mlp, MlpParams, MlpTraining};

use crate::corpus::words;
use crate::embedder::Embedding;
use crate::error::{Error, Result};
use crate::hash;
use crate::service::EmbeddingService;

pub const DEFAULT_STEALER_FEATURE_DIM: usize = 2048;
pub const DEFAULT_RIDGE_LAMBDA: f64 = 1e-4;
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Stealer-side hashed bag-of-words featurizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StealerFeaturizer {
    pub feature_dim: usize,
    pub hash_seed: u64,
}

impl Default for StealerFeaturizer {
    fn default() -> Self {
        Self {
            feature_dim: DEFAULT_STEALER_FEATURE_DIM,
            hash_seed: 0x5eed_57ea,
        }
    }
}

/// Sparse feature vector with sorted, unique indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseFeatures {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseFeatures {
    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices
            .iter()
            .copied()
            .zip(self.values.iter().copied())
    }

    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        for (i, v) in self.iter() {
            out[i] = v;
        }
        out
    }
}

impl StealerFeaturizer {
    /// Total input width, including the trailing bias bucket.
    pub fn width(&self) -> usize {
        self.feature_dim + 1
    }

    /// Bucket counts plus a constant bias bucket, L2-normalized.
    pub fn featurize(&self, text: &str) -> SparseFeatures {
        let mut buckets: Vec<usize> = words(text)
            .iter()
            .map(|w| hash::bucket(self.hash_seed, w, self.feature_dim))
            .collect();
        buckets.push(self.feature_dim);
        buckets.sort_unstable();
        let mut indices = Vec::new();
        let mut values: Vec<f64> = Vec::new();
        for b in buckets {
            if indices.last() == Some(&b) {
                *values.last_mut().unwrap() += 1.0;
            } else {
                indices.push(b);
                values.push(1.0);
            }
        }
        let n = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        values.iter_mut().for_each(|v| *v /= n);
        SparseFeatures { indices, values }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StealerHead {
    /// `W·φ(x) + b`, with `weights` stored as `d` rows.
    Linear {
        weights: Vec<Vec<f64>>,
        bias: Vec<f64>,
    },
    Mlp(MlpParams),
}

/// A fitted extraction model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StealerModel {
    pub version: u32,
    pub featurizer: StealerFeaturizer,
    #[serde(flatten)]
    pub head: StealerHead,
}

impl StealerModel {
    pub fn output_dim(&self) -> usize {
        match &self.head {
            StealerHead::Linear { bias, .. } => bias.len(),
            StealerHead::Mlp(p) => p.b2.len(),
        }
    }

    pub fn predict(&self, features: &SparseFeatures) -> Vec<f64> {
        match &self.head {
            StealerHead::Linear { weights, bias } => weights
                .iter()
                .zip(bias)
                .map(|(row, b)| b + features.iter().map(|(j, v)| row[j] * v).sum::<f64>())
                .collect(),
            StealerHead::Mlp(p) => p.forward(features).1,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        let m: Self = serde_json::from_reader(std::io::BufReader::new(f))?;
        if m.version != MODEL_FORMAT_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported stealer model version {}",
                m.version
            )));
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }
}

/// Raw (unnormalized) stealer output for `text`.
pub fn stealer_embed(model: &StealerModel, text: &str) -> Embedding {
    Embedding::new(model.predict(&model.featurizer.featurize(text)))
}

impl EmbeddingService for StealerModel {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Embedding>> {
        Ok(texts.iter().map(|t| stealer_embed(self, t)).collect())
    }
}

/// Mean over samples and coordinates of the squared error.
pub fn mean_squared_error(
    model: &StealerModel,
    queries: &[String],
    responses: &[Embedding],
) -> f64 {
    let total: f64 = queries
        .iter()
        .zip(responses)
        .map(|(q, r)| {
            stealer_embed(model, q)
                .as_slice()
                .iter()
                .zip(r.as_slice())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
        })
        .sum();
    total / (queries.len() * responses.first().map_or(1, Embedding::dim)) as f64
}

pub(crate) fn check_training_pairs(queries: &[String], responses: &[Embedding]) -> Result<usize> {
    if queries.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    if queries.len() != responses.len() {
        return Err(Error::DimensionMismatch {
            expected: queries.len(),
            found: responses.len(),
        });
    }
    let d = responses[0].dim();
    if let Some(r) = responses.iter().find(|r| r.dim() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: r.dim(),
        });
    }
    Ok(d)
}
