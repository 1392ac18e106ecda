//! Trigger-weighted watermark injection and the rare-token baseline.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, TokenSet, TriggerSet};
use crate::embedder::{Embedding, ProviderModel};
use crate::error::{Error, Result};
use crate::service::EmbeddingService;

pub const DEFAULT_MAX_TRIGGERS: usize = 4;
pub const DEFAULT_TRIGGER_COUNT: usize = 20;
pub const DEFAULT_THRESHOLD: f64 = 5e-3;

/// Below this norm the mixed vector is treated as degenerate.
const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WatermarkConfig {
    pub trigger_set: TriggerSet,
    /// Number of triggers that fully activates the watermark.
    pub m: usize,
    pub target: Embedding,
    pub threshold_tau: f64,
}

impl WatermarkConfig {
    pub fn new(
        trigger_set: TriggerSet,
        m: usize,
        target: Embedding,
        threshold_tau: f64,
    ) -> Result<Self> {
        let cfg = Self {
            trigger_set,
            m,
            target,
            threshold_tau,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::InvalidConfig("m must be at least 1".into()));
        }
        if !self.target.is_unit(1e-9) {
            return Err(Error::InvalidConfig(
                "target embedding must be unit norm".into(),
            ));
        }
        if !(self.threshold_tau > 0.0 && self.threshold_tau < 1.0) {
            return Err(Error::InvalidConfig("threshold must lie in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        let cfg: Self = serde_json::from_reader(std::io::BufReader::new(f))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Number of distinct trigger words in `tokens`.
pub fn trigger_count(tokens: &TokenSet, triggers: &TriggerSet) -> usize {
    let t: HashSet<&str> = triggers.triggers.iter().map(String::as_str).collect();
    tokens.iter().filter(|w| t.contains(w)).count()
}

/// `min(|S ∩ T|, m) / m`.
pub fn trigger_weight(tokens: &TokenSet, cfg: &WatermarkConfig) -> f64 {
    let hits = trigger_count(tokens, &cfg.trigger_set);
    hits.min(cfg.m) as f64 / cfg.m as f64
}

/// Normalized convex combination `(1-w)·e_o + w·e_t`. Both inputs are unit
/// vectors, so the endpoints `w = 0` and `w = 1` return them unchanged.
pub fn inject(original: &Embedding, target: &Embedding, weight: f64) -> Result<Embedding> {
    if original.dim() != target.dim() {
        return Err(Error::DimensionMismatch {
            expected: original.dim(),
            found: target.dim(),
        });
    }
    if !(0.0..=1.0).contains(&weight) {
        return Err(Error::InvalidConfig(format!(
            "weight {weight} outside [0, 1]"
        )));
    }
    if weight == 0.0 {
        return Ok(original.clone());
    }
    if weight == 1.0 {
        return Ok(target.clone());
    }
    let mixed: Vec<f64> = original
        .as_slice()
        .iter()
        .zip(target.as_slice())
        .map(|(o, t)| (1.0 - weight) * o + weight * t)
        .collect();
    if crate::vector::norm(&mixed) < DEGENERATE_NORM {
        return Err(Error::DegenerateCombination);
    }
    Embedding::unit(&mixed).ok_or(Error::DegenerateCombination)
}

/// Watermarked embedding served to clients.
pub fn provide(model: &ProviderModel, cfg: &WatermarkConfig, text: &str) -> Result<Embedding> {
    let weight = trigger_weight(&tokenize(text), cfg);
    inject(&model.embed_original(text), &cfg.target, weight)
}

/// Rare-token backdoor: the target replaces the embedding of any text containing
/// the token, and nothing changes otherwise.
pub fn redalarm_provide(
    model: &ProviderModel,
    rare_trigger: &str,
    target: &Embedding,
    text: &str,
) -> Embedding {
    if tokenize(text).contains(rare_trigger) {
        target.clone()
    } else {
        model.embed_original(text)
    }
}

/// How a victim service alters the embeddings it returns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum Scheme {
    Original,
    EmbMarker(WatermarkConfig),
    RedAlarm {
        rare_trigger: String,
        target: Embedding,
    },
}

/// The provider's service.
#[derive(Debug, Clone)]
pub struct VictimService {
    pub model: ProviderModel,
    pub scheme: Scheme,
}

impl VictimService {
    pub fn new(model: ProviderModel, scheme: Scheme) -> Self {
        Self { model, scheme }
    }

    pub fn respond(&self, text: &str) -> Result<Embedding> {
        match &self.scheme {
            Scheme::Original => Ok(self.model.embed_original(text)),
            Scheme::EmbMarker(cfg) => provide(&self.model, cfg, text),
            Scheme::RedAlarm {
                rare_trigger,
                target,
            } => Ok(redalarm_provide(&self.model, rare_trigger, target, text)),
        }
    }
}

impl EmbeddingService for VictimService {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Embedding>> {
        texts.iter().map(|t| self.respond(t)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::FrequencyInterval;
    use crate::embedder::{random_unit, ProviderParams};
    use proptest::prelude::*;

    fn triggers(words: &[&str]) -> TriggerSet {
        TriggerSet {
            triggers: words.iter().map(|w| w.to_string()).collect(),
            interval: FrequencyInterval::default(),
            seed: 0,
            frequencies: vec![],
        }
    }

    fn cfg(m: usize) -> WatermarkConfig {
        let ts = triggers(&["t0", "t1", "t2", "t3", "t4", "t5", "t6", "t7"]);
        WatermarkConfig::new(ts, m, random_unit(64, 3), DEFAULT_THRESHOLD).unwrap()
    }

    #[test]
    fn weight_examples() {
        let c = cfg(4);
        assert_eq!(trigger_weight(&tokenize("plain words only"), &c), 0.0);
        assert_eq!(trigger_weight(&tokenize("t0 x t1 y"), &c), 0.5);
        assert_eq!(trigger_weight(&tokenize("t0 t1 t2 t3 t4 t5 t6"), &c), 1.0);
        // repeats count once
        assert_eq!(trigger_weight(&tokenize("t0 t0 t0"), &c), 0.25);
    }

    #[test]
    fn attainable_weight_grid_has_m_plus_one_values() {
        for m in 1..=8 {
            let c = cfg(m);
            let mut seen: Vec<f64> = (0..=8)
                .map(|k| {
                    let text: Vec<String> = (0..k).map(|i| format!("t{i}")).collect();
                    trigger_weight(&tokenize(&text.join(" ")), &c)
                })
                .collect();
            seen.dedup();
            assert_eq!(seen.len(), m + 1);
        }
    }

    #[test]
    fn config_validation() {
        let ts = triggers(&["a"]);
        let t = random_unit(8, 1);
        assert!(WatermarkConfig::new(ts.clone(), 0, t.clone(), 0.01).is_err());
        assert!(WatermarkConfig::new(ts.clone(), 1, t.clone(), 0.0).is_err());
        assert!(WatermarkConfig::new(ts.clone(), 1, t.clone(), 1.0).is_err());
        assert!(WatermarkConfig::new(ts, 1, Embedding::new(vec![2.0; 8]), 0.01).is_err());
    }

    #[test]
    fn inject_examples() {
        let eo = Embedding::new(vec![1.0, 0.0]);
        let et = Embedding::new(vec![0.0, 1.0]);
        assert_eq!(inject(&eo, &et, 0.0).unwrap(), eo);
        assert_eq!(inject(&eo, &et, 1.0).unwrap(), et);
        let h = inject(&eo, &et, 0.5).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((h.as_slice()[0] - r).abs() < 1e-15 && (h.as_slice()[1] - r).abs() < 1e-15);
    }

    #[test]
    fn inject_errors() {
        let eo = Embedding::new(vec![1.0, 0.0]);
        let anti = Embedding::new(vec![-1.0, 0.0]);
        assert!(matches!(
            inject(&eo, &anti, 0.5),
            Err(Error::DegenerateCombination)
        ));
        assert!(matches!(
            inject(&eo, &Embedding::new(vec![1.0]), 0.5),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(inject(&eo, &eo, 1.5).is_err());
    }

    #[test]
    fn provide_paths() {
        let model = ProviderModel::new(ProviderParams::default());
        let c = cfg(4);
        let plain = "alpha beta gamma";
        assert_eq!(
            provide(&model, &c, plain).unwrap(),
            model.embed_original(plain)
        );
        let full = provide(&model, &c, "t0 t1 t2 t3").unwrap();
        for (a, b) in full.as_slice().iter().zip(c.target.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn one_trigger_moves_toward_target() {
        let model = ProviderModel::new(ProviderParams::default());
        let c = cfg(4);
        for i in 0..1000 {
            let text = format!("w{i} v{} u{} t{}", i * 7, i * 13, i % 8);
            let eo = model.embed_original(&text);
            let ep = provide(&model, &c, &text).unwrap();
            assert!(ep.cosine(&c.target) > eo.cosine(&c.target), "text {text}");
        }
    }

    #[test]
    fn redalarm_paths() {
        let model = ProviderModel::new(ProviderParams::default());
        let t = random_unit(64, 8);
        assert_eq!(redalarm_provide(&model, "cf", &t, "the cf token"), t);
        assert_eq!(
            redalarm_provide(&model, "cf", &t, "no rare here"),
            model.embed_original("no rare here")
        );
    }

    fn unit_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (2usize..16).prop_flat_map(|d| {
            (
                prop::collection::vec(-1.0f64..1.0, d),
                prop::collection::vec(-1.0f64..1.0, d),
            )
        })
    }

    proptest! {
        #[test]
        fn cos_to_target_increases_with_weight((a, b) in unit_pair()) {
            let (Some(eo), Some(et)) = (Embedding::unit(&a), Embedding::unit(&b)) else {
                return Ok(());
            };
            let c0 = eo.cosine(&et);
            prop_assume!(c0 < 1.0 - 1e-9 && c0 > -1.0 + 1e-6);
            let mut prev = f64::NEG_INFINITY;
            for k in 0..=20 {
                let e = inject(&eo, &et, k as f64 / 20.0).unwrap();
                prop_assert!(e.is_unit(1e-9));
                let c = e.cosine(&et);
                prop_assert!(c > prev, "k={} c={} prev={}", k, c, prev);
                prev = c;
            }
        }

        #[test]
        fn weight_is_monotone_and_saturates(m in 1usize..8, hits in 0usize..8) {
            let c = cfg(m);
            let text = |k: usize| (0..k).map(|i| format!("t{i}")).collect::<Vec<_>>().join(" ");
            let w = trigger_weight(&tokenize(&text(hits)), &c);
            let w_next = trigger_weight(&tokenize(&text(hits + 1)), &c);
            prop_assert!(w_next >= w);
            if hits >= m {
                prop_assert_eq!(w, 1.0);
            }
        }
    }
}
