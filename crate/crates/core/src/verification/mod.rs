//! Black-box copyright verification.
//!
//! A suspect service is queried with backdoor and benign probe texts; the cosine
//! similarities of its answers to the target embedding are compared with a
//! two-sample KS test.

mod ks;
mod probes;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use ks::{kolmogorov_tail, ks_p_value, ks_statistic, ks_two_sample, KsResult};
pub use probes::{
    benign_pool, build_mixed_probe_sets, build_probe_sets, ProbeSets, DEFAULT_PROBE_COUNT,
};

use crate::embedder::Embedding;
use crate::error::{Error, Result, ZeroSource};
use crate::service::{query_checked, EmbeddingService};
use crate::vector::{dot, mean, norm};
use crate::watermark::WatermarkConfig;

/// Per-probe similarities to the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilaritySets {
    pub cos_backdoor: Vec<f64>,
    pub cos_benign: Vec<f64>,
    /// Squared L2 distance between normalized vectors.
    pub l2_backdoor: Vec<f64>,
    pub l2_benign: Vec<f64>,
}

fn similarities(
    embeddings: &[Embedding],
    target_unit: &[f64],
    zero: impl Fn(usize) -> ZeroSource,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut cos = Vec::with_capacity(embeddings.len());
    let mut l2 = Vec::with_capacity(embeddings.len());
    for (i, e) in embeddings.iter().enumerate() {
        let n = e.norm();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::ZeroEmbedding(zero(i)));
        }
        if e.dim() != target_unit.len() {
            return Err(Error::DimensionMismatch {
                expected: target_unit.len(),
                found: e.dim(),
            });
        }
        cos.push(dot(e.as_slice(), target_unit) / n);
        l2.push(
            e.as_slice()
                .iter()
                .zip(target_unit)
                .map(|(x, t)| (x / n - t).powi(2))
                .sum(),
        );
    }
    Ok((cos, l2))
}

pub fn similarity_sets(
    backdoor: &[Embedding],
    benign: &[Embedding],
    target: &Embedding,
) -> Result<SimilaritySets> {
    let tn = target.norm();
    if !(tn > 0.0 && tn.is_finite()) {
        return Err(Error::ZeroEmbedding(ZeroSource::Target));
    }
    let target_unit: Vec<f64> = target.as_slice().iter().map(|v| v / tn).collect();
    let (cos_backdoor, l2_backdoor) = similarities(backdoor, &target_unit, ZeroSource::Backdoor)?;
    let (cos_benign, l2_benign) = similarities(benign, &target_unit, ZeroSource::Benign)?;
    Ok(SimilaritySets {
        cos_backdoor,
        cos_benign,
        l2_backdoor,
        l2_benign,
    })
}

/// `(mean C_b − mean C_n, mean L_b − mean L_n)`.
pub fn delta_metrics(s: &SimilaritySets) -> Result<(f64, f64)> {
    if [&s.cos_backdoor, &s.cos_benign, &s.l2_backdoor, &s.l2_benign]
        .iter()
        .any(|v| v.is_empty())
    {
        return Err(Error::EmptySampleSet);
    }
    Ok((
        mean(&s.cos_backdoor) - mean(&s.cos_benign),
        mean(&s.l2_backdoor) - mean(&s.l2_benign),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerificationMode {
    /// Compare against the provider's own target embedding.
    Base,
    /// Compare against the suspect's embedding of the target sample.
    Modified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub mode: VerificationMode,
    pub delta_cos: f64,
    pub delta_l2: f64,
    pub ks_statistic: f64,
    pub p_value: f64,
    pub threshold: f64,
    /// `p_value < threshold`.
    pub infringing: bool,
    pub backdoor_count: usize,
    pub benign_count: usize,
}

impl VerificationReport {
    pub fn from_similarities(
        s: &SimilaritySets,
        threshold: f64,
        mode: VerificationMode,
    ) -> Result<Self> {
        let (delta_cos, delta_l2) = delta_metrics(s)?;
        let ks = ks_two_sample(&s.cos_backdoor, &s.cos_benign)?;
        Ok(Self {
            mode,
            delta_cos,
            delta_l2,
            ks_statistic: ks.statistic,
            p_value: ks.p_value,
            threshold,
            infringing: ks.p_value < threshold,
            backdoor_count: s.cos_backdoor.len(),
            benign_count: s.cos_benign.len(),
        })
    }

    pub fn decision(&self) -> &'static str {
        if self.infringing {
            "infringing"
        } else {
            "not infringing"
        }
    }
}

/// Aligned plain-text table; one row per `(label, report)`.
pub fn format_table<'a>(
    rows: impl IntoIterator<Item = (&'a str, &'a VerificationReport)>,
) -> String {
    let rows: Vec<_> = rows.into_iter().collect();
    let width = rows
        .iter()
        .map(|(l, _)| l.len())
        .chain([5])
        .max()
        .unwrap_or(5);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:<8}  {:>10}  {:>9}  {:>9}  {:>6}  decision",
        "label", "mode", "p-value", "Δcos(%)", "Δl2(%)", "D"
    );
    for (label, r) in rows {
        let mode = match r.mode {
            VerificationMode::Base => "base",
            VerificationMode::Modified => "modified",
        };
        let _ = writeln!(
            out,
            "{:<width$}  {:<8}  {:>10.2e}  {:>9.2}  {:>9.2}  {:>6.4}  {}",
            label,
            mode,
            r.p_value,
            r.delta_cos * 100.0,
            r.delta_l2 * 100.0,
            r.ks_statistic,
            r.decision()
        );
    }
    out
}

fn query_probes<S: EmbeddingService + ?Sized>(
    service: &S,
    probes: &ProbeSets,
) -> Result<(Vec<Embedding>, Vec<Embedding>)> {
    Ok((
        query_checked(service, &probes.backdoor_texts)?,
        query_checked(service, &probes.benign_texts)?,
    ))
}

/// Verification against the watermark's own target embedding.
pub fn verify<S: EmbeddingService + ?Sized>(
    service: &S,
    cfg: &WatermarkConfig,
    probes: &ProbeSets,
) -> Result<VerificationReport> {
    verify_against(
        service,
        &cfg.target,
        cfg.threshold_tau,
        probes,
        VerificationMode::Base,
    )
}

/// Verification against the suspect's own embedding of `target_sample`, which is
/// unaffected by any similarity-preserving transform the suspect applies.
pub fn verify_modified<S: EmbeddingService + ?Sized>(
    service: &S,
    target_sample: &str,
    cfg: &WatermarkConfig,
    probes: &ProbeSets,
) -> Result<VerificationReport> {
    let target = service.embed(target_sample)?;
    let n = norm(target.as_slice());
    if !(n > 0.0 && n.is_finite()) {
        return Err(Error::ZeroEmbedding(ZeroSource::Target));
    }
    verify_against(
        service,
        &target,
        cfg.threshold_tau,
        probes,
        VerificationMode::Modified,
    )
}

pub fn verify_against<S: EmbeddingService + ?Sized>(
    service: &S,
    target: &Embedding,
    threshold: f64,
    probes: &ProbeSets,
    mode: VerificationMode,
) -> Result<VerificationReport> {
    let (b, n) = query_probes(service, probes)?;
    let sims = similarity_sets(&b, &n, target)?;
    VerificationReport::from_similarities(&sims, threshold, mode)
}
