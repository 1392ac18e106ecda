//! Mock provider model: hashed bag-of-words counts pushed through a fixed Gaussian
//! projection and L2-normalized.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, words};
use crate::error::{Error, Result};
use crate::hash;
use crate::vector;

pub const DEFAULT_DIM: usize = 64;
pub const DEFAULT_FEATURE_DIM: usize = 4096;

/// A real-valued embedding vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    /// Normalizes `values`; `None` if the vector is zero or not finite.
    pub fn unit(values: &[f64]) -> Option<Self> {
        vector::normalized(values).map(Self)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        vector::norm(&self.0)
    }

    pub fn is_unit(&self, tol: f64) -> bool {
        (self.norm() - 1.0).abs() <= tol
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn cosine(&self, other: &Embedding) -> f64 {
        vector::cosine(&self.0, &other.0)
    }
}

impl From<Vec<f64>> for Embedding {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl AsRef<[f64]> for Embedding {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Persisted parameters of a [`ProviderModel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderParams {
    pub dim: usize,
    pub feature_dim: usize,
    pub projection_seed: u64,
    pub hash_seed: u64,
}

impl Default for ProviderParams {
    fn default() -> Self {
        Self {
            dim: DEFAULT_DIM,
            feature_dim: DEFAULT_FEATURE_DIM,
            projection_seed: 0,
            hash_seed: 0,
        }
    }
}

/// Stand-in for the victim's embedding model.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "ProviderParams", into = "ProviderParams")]
pub struct ProviderModel {
    params: ProviderParams,
    /// `feature_dim + 1` columns of length `dim`; the last column is the bias bucket.
    projection: Vec<f64>,
}

impl From<ProviderParams> for ProviderModel {
    fn from(params: ProviderParams) -> Self {
        Self::new(params)
    }
}

impl From<ProviderModel> for ProviderParams {
    fn from(m: ProviderModel) -> Self {
        m.params
    }
}

impl PartialEq for ProviderModel {
    fn eq(&self, other: &Self) -> bool {
        self.params == other.params
    }
}

impl ProviderModel {
    pub fn new(params: ProviderParams) -> Self {
        assert!(
            params.dim > 0 && params.feature_dim > 0,
            "provider dimensions must be positive"
        );
        let mut rng = ChaCha8Rng::seed_from_u64(params.projection_seed);
        let projection = (0..params.dim * (params.feature_dim + 1))
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        Self { params, projection }
    }

    pub fn params(&self) -> ProviderParams {
        self.params
    }

    pub fn dim(&self) -> usize {
        self.params.dim
    }

    fn column(&self, j: usize) -> &[f64] {
        let d = self.params.dim;
        &self.projection[j * d..(j + 1) * d]
    }

    /// Unit-norm original embedding of `text`. Never fails: an empty text still
    /// activates the bias bucket.
    pub fn embed_original(&self, text: &str) -> Embedding {
        let d = self.params.dim;
        let mut out = self.column(self.params.feature_dim).to_vec();
        for w in words(text) {
            let col = self.column(hash::bucket(
                self.params.hash_seed,
                &w,
                self.params.feature_dim,
            ));
            for (o, c) in out.iter_mut().zip(col) {
                *o += c;
            }
        }
        debug_assert_eq!(out.len(), d);
        // A zero sum has probability zero under a Gaussian projection.
        Embedding::unit(&out).expect("projection produced a zero vector")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// How the watermark target embedding is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TargetMode {
    /// Uniform direction on the unit sphere.
    Random { seed: u64 },
    /// The provider's own embedding of a chosen text.
    FromSample { text: String },
}

pub fn make_target_embedding(mode: &TargetMode, model: &ProviderModel) -> Result<Embedding> {
    match mode {
        TargetMode::Random { seed } => Ok(random_unit(model.dim(), *seed)),
        TargetMode::FromSample { text } => {
            if tokenize(text).is_empty() {
                return Err(Error::DegenerateTargetSample);
            }
            Ok(model.embed_original(text))
        }
    }
}

/// Seeded uniform direction on the unit sphere in `dim` dimensions.
pub fn random_unit(dim: usize, seed: u64) -> Embedding {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        if let Some(e) = Embedding::unit(&v) {
            return e;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> ProviderModel {
        ProviderModel::new(ProviderParams {
            projection_seed: 11,
            hash_seed: 12,
            ..Default::default()
        })
    }

    #[test]
    fn deterministic_and_unit() {
        let m = model();
        let a = m.embed_original("the quick brown fox");
        assert_eq!(a, m.embed_original("the quick brown fox"));
        assert_eq!(a.dim(), 64);
        assert!(a.is_unit(1e-9));
        assert!(m.embed_original("").is_unit(1e-9));
        assert!(m.embed_original("!!!").is_unit(1e-9));
    }

    #[test]
    fn empty_text_is_the_bias_direction() {
        let m = model();
        assert_eq!(m.embed_original(""), m.embed_original(" ,. "));
    }

    #[test]
    fn counts_matter() {
        let m = model();
        assert_ne!(m.embed_original("a a b"), m.embed_original("a b"));
    }

    #[test]
    fn disjoint_texts_are_weakly_correlated() {
        // With ~20 words per text the shared bias bucket contributes roughly 1/21
        // of each vector's energy, so cosines concentrate near zero.
        let mut big = 0;
        for s in 0..100u64 {
            let m = ProviderModel::new(ProviderParams {
                projection_seed: s,
                hash_seed: s + 1000,
                ..Default::default()
            });
            let a: Vec<String> = (0..20).map(|i| format!("left{s}x{i}")).collect();
            let b: Vec<String> = (0..20).map(|i| format!("right{s}x{i}")).collect();
            let c = m
                .embed_original(&a.join(" "))
                .cosine(&m.embed_original(&b.join(" ")));
            if c.abs() >= 0.5 {
                big += 1;
            }
        }
        assert!(big <= 2, "{big} of 100 pairs had |cos| >= 0.5");
    }

    #[test]
    fn target_modes() {
        let m = model();
        let a = make_target_embedding(&TargetMode::Random { seed: 4 }, &m).unwrap();
        assert_eq!(
            a,
            make_target_embedding(&TargetMode::Random { seed: 4 }, &m).unwrap()
        );
        assert!(a.is_unit(1e-12));
        let b = random_unit(4, 9);
        assert_eq!(b.dim(), 4);
        assert!(b.is_unit(1e-12));

        let s = make_target_embedding(
            &TargetMode::FromSample {
                text: "zebra quantum".into(),
            },
            &m,
        )
        .unwrap();
        assert_eq!(s, m.embed_original("zebra quantum"));
        assert!(matches!(
            make_target_embedding(&TargetMode::FromSample { text: " ".into() }, &m),
            Err(Error::DegenerateTargetSample)
        ));
    }

    #[test]
    fn json_persists_parameters_only() {
        let m = model();
        let s = serde_json::to_string(&m).unwrap();
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v["dim"], 64);
        assert_eq!(v["feature_dim"], 4096);
        assert_eq!(v.as_object().unwrap().len(), 4);
        let back: ProviderModel = serde_json::from_str(&s).unwrap();
        assert_eq!(back.embed_original("x y"), m.embed_original("x y"));
    }
}
