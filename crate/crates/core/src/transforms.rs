//! Similarity-invariant transforms a stealer can apply to its outputs, and the
//! service wrapper that applies them.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::embedder::Embedding;
use crate::error::{Error, Result, ZeroSource};
use crate::service::EmbeddingService;
use crate::vector::{cosine, dot, norm, normalized_sq_l2};

/// Transform selector as written in configs and on the command line:
/// `identity`, `shift` or `ortho:<seed>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum TransformSpec {
    Identity,
    DimensionShift,
    Orthogonal { seed: u64 },
}

impl TransformSpec {
    pub fn build(self, dim: usize) -> Transform {
        match self {
            TransformSpec::Identity => Transform::Identity,
            TransformSpec::DimensionShift => Transform::DimensionShift,
            TransformSpec::Orthogonal { seed } => Transform::orthogonal(dim, seed),
        }
    }
}

impl fmt::Display for TransformSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransformSpec::Identity => f.write_str("identity"),
            TransformSpec::DimensionShift => f.write_str("shift"),
            TransformSpec::Orthogonal { seed } => write!(f, "ortho:{seed}"),
        }
    }
}

impl FromStr for TransformSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Self::Identity),
            "shift" => Ok(Self::DimensionShift),
            _ => match s.strip_prefix("ortho:").map(str::parse::<u64>) {
                Some(Ok(seed)) => Ok(Self::Orthogonal { seed }),
                _ => Err(Error::InvalidConfig(format!(
                    "unknown transform {s:?}; expected identity, shift or ortho:<seed>"
                ))),
            },
        }
    }
}

impl TryFrom<String> for TransformSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<TransformSpec> for String {
    fn from(t: TransformSpec) -> Self {
        t.to_string()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Transform {
    Identity,
    /// `(v_d, v_1, …, v_{d−1})`: the last coordinate moves to the front.
    DimensionShift,
    /// `Q·v` for an orthogonal `Q`, stored row-major.
    Orthogonal {
        dim: usize,
        matrix: Vec<f64>,
    },
}

impl Transform {
    /// Orthonormalizes seeded Gaussian columns by modified Gram-Schmidt, run
    /// twice per column to keep `QᵀQ` at machine precision.
    pub fn orthogonal(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cols: Vec<Vec<f64>> = Vec::with_capacity(dim);
        while cols.len() < dim {
            let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            for _ in 0..2 {
                for q in &cols {
                    let p = dot(&v, q);
                    v.iter_mut().zip(q).for_each(|(x, y)| *x -= p * y);
                }
            }
            let n = norm(&v);
            if n > 1e-8 {
                v.iter_mut().for_each(|x| *x /= n);
                cols.push(v);
            }
        }
        let mut matrix = vec![0.0; dim * dim];
        for (c, col) in cols.iter().enumerate() {
            for (r, v) in col.iter().enumerate() {
                matrix[r * dim + c] = *v;
            }
        }
        Transform::Orthogonal { dim, matrix }
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        match self {
            Transform::Identity => Ok(v.to_vec()),
            Transform::DimensionShift => {
                let mut out = v.to_vec();
                out.rotate_right(1);
                Ok(out)
            }
            Transform::Orthogonal { dim, matrix } => {
                if v.len() != *dim {
                    return Err(Error::DimensionMismatch {
                        expected: *dim,
                        found: v.len(),
                    });
                }
                Ok(matrix.chunks_exact(*dim).map(|row| dot(row, v)).collect())
            }
        }
    }

    /// `max |QᵀQ − I|` for the orthogonal variant, zero otherwise.
    pub fn orthogonality_error(&self) -> f64 {
        let Transform::Orthogonal { dim, matrix } = self else {
            return 0.0;
        };
        let d = *dim;
        let mut worst: f64 = 0.0;
        for a in 0..d {
            for b in 0..d {
                let s: f64 = (0..d).map(|r| matrix[r * d + a] * matrix[r * d + b]).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((s - want).abs());
            }
        }
        worst
    }
}

/// Largest change in cosine or normalized squared L2 over the given pairs.
pub fn check_invariance(t: &Transform, pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (k, (i, j)) in pairs.iter().enumerate() {
        if norm(i) == 0.0 || norm(j) == 0.0 {
            return Err(Error::ZeroEmbedding(ZeroSource::Pair(k)));
        }
        let (ti, tj) = (t.apply(i)?, t.apply(j)?);
        worst = worst
            .max((cosine(&ti, &tj) - cosine(i, j)).abs())
            .max((normalized_sq_l2(&ti, &tj) - normalized_sq_l2(i, j)).abs());
    }
    Ok(worst)
}

/// A service whose every answer has been passed through a transform.
pub struct TransformedService<S> {
    inner: S,
    transform: Transform,
}

pub fn wrap_service<S: EmbeddingService>(inner: S, transform: Transform) -> TransformedService<S> {
    TransformedService { inner, transform }
}

impl<S: EmbeddingService> EmbeddingService for TransformedService<S> {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Embedding>> {
        self.inner
            .embed_batch(texts)?
            .into_iter()
            .map(|e| self.transform.apply(e.as_slice()).map(Embedding::new))
            .collect()
    }
}
