use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::classifier::train_downstream_classifier;
use super::config::{Baseline, ExperimentConfig, StealerKind};
use crate::corpus::{
    build_frequency_table, generate_synthetic_corpus, select_triggers, FrequencyTable,
    LabeledCorpus, TriggerSet,
};
use crate::embedder::{
    make_target_embedding, Embedding, ProviderModel, ProviderParams, TargetMode,
};
use crate::error::{Result, StageExt};
use crate::extraction::{
    fit_linear, fit_mlp, mean_squared_error, MlpTraining, StealerFeaturizer, StealerModel,
};
use crate::hash::splitmix64;
use crate::service::EmbeddingService;
use crate::transforms::wrap_service;
use crate::verification::{
    build_mixed_probe_sets, verify_against, verify_modified, ProbeSets, VerificationMode,
    VerificationReport,
};
use crate::watermark::{Scheme, VictimService, WatermarkConfig};

/// Token planted once in the general corpus for the rare-token baseline. The
/// letter `q` never occurs in synthetic vocabulary, so copy corpora never hold it.
pub const RARE_TOKEN: &str = "qqcf";

#[derive(Debug, Clone, Copy)]
#[repr(u64)]
enum SeedTag {
    GeneralCorpus = 1,
    CopyCorpus,
    Triggers,
    Projection,
    ProviderHash,
    Target,
    Probes,
    StealerHash,
    StealerInit,
    Classifier,
    RarePlacement,
}

/// Independent sub-seed for one pipeline stage.
fn derive_seed(seed: u64, tag: SeedTag) -> u64 {
    splitmix64(seed ^ splitmix64(tag as u64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub triggers: usize,
    pub delta_cos: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Utility {
    pub original: f64,
    pub provided: f64,
}

impl Utility {
    /// Accuracy lost by training on provided rather than original embeddings.
    pub fn drop(&self) -> f64 {
        self.original - self.provided
    }
}

/// Wall-clock stage timings in milliseconds. Kept out of the report JSON so that
/// reports stay byte-identical across replays.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub stages: Vec<(String, f64)>,
}

impl Timings {
    fn record<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.stages
            .push((stage.to_string(), start.elapsed().as_secs_f64() * 1e3));
        out
    }

    pub fn total_ms(&self) -> f64 {
        self.stages.iter().map(|(_, ms)| ms).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub triggers: Vec<String>,
    pub rare_trigger: Option<String>,
    pub verification: VerificationReport,
    pub utility: Option<Utility>,
    pub stealer_training_mse: f64,
    /// Δcos of probes holding exactly `k` triggers, for `k = 0..=m`.
    pub trigger_curve: Vec<CurvePoint>,
    #[serde(skip)]
    pub timings: Timings,
}

/// Corpus, triggers and watermarked provider: everything the victim side owns.
#[derive(Debug, Clone)]
pub struct VictimSetup {
    pub general_corpus: LabeledCorpus,
    pub frequencies: FrequencyTable,
    pub triggers: TriggerSet,
    pub watermark: WatermarkConfig,
    pub victim: VictimService,
    pub target_sample: String,
}

impl VictimSetup {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        Self::build(cfg, &mut Timings::default())
    }

    fn build(cfg: &ExperimentConfig, timings: &mut Timings) -> Result<Self> {
        let seed = cfg.seed;
        let c = &cfg.corpus;
        let mut general_corpus = timings
            .record("general corpus", || {
                generate_synthetic_corpus(
                    c.num_texts,
                    c.num_classes,
                    c.vocab_size,
                    c.text_len,
                    derive_seed(seed, SeedTag::GeneralCorpus),
                )
            })
            .stage("general corpus")?;
        if cfg.baseline == Baseline::RedAlarm {
            let at =
                (derive_seed(seed, SeedTag::RarePlacement) % general_corpus.len() as u64) as usize;
            general_corpus.texts[at].0.push(' ');
            general_corpus.texts[at].0.push_str(RARE_TOKEN);
        }
        let texts = general_corpus.text_strings();
        let frequencies = timings
            .record("frequencies", || build_frequency_table(&texts))
            .stage("frequencies")?;
        let w = &cfg.watermark;
        let triggers = select_triggers(
            &frequencies,
            w.interval,
            w.n,
            derive_seed(seed, SeedTag::Triggers),
        )
        .stage("trigger selection")?;

        let model = ProviderModel::new(ProviderParams {
            dim: cfg.dim,
            feature_dim: cfg.feature_dim,
            projection_seed: derive_seed(seed, SeedTag::Projection),
            hash_seed: derive_seed(seed, SeedTag::ProviderHash),
        });
        let target_sample = cfg
            .target_sample
            .clone()
            .unwrap_or_else(|| texts[0].clone());
        let target_mode = match cfg.verification {
            VerificationMode::Base => TargetMode::Random {
                seed: derive_seed(seed, SeedTag::Target),
            },
            VerificationMode::Modified => TargetMode::FromSample {
                text: target_sample.clone(),
            },
        };
        let target = make_target_embedding(&target_mode, &model).stage("target embedding")?;
        let watermark =
            WatermarkConfig::new(triggers.clone(), w.m, target.clone(), w.threshold_tau)
                .stage("watermark config")?;
        let scheme = match cfg.baseline {
            Baseline::Original => Scheme::Original,
            Baseline::EmbMarker => Scheme::EmbMarker(watermark.clone()),
            Baseline::RedAlarm => Scheme::RedAlarm {
                rare_trigger: RARE_TOKEN.to_string(),
                target: target.clone(),
            },
        };
        Ok(Self {
            general_corpus,
            frequencies,
            triggers,
            watermark,
            victim: VictimService::new(model, scheme),
            target_sample,
        })
    }

    /// The seeded copy corpus a stealer would query.
    pub fn copy_corpus(cfg: &ExperimentConfig) -> Result<LabeledCorpus> {
        let c = &cfg.corpus;
        generate_synthetic_corpus(
            c.num_texts,
            c.num_classes,
            c.vocab_size,
            c.text_len,
            derive_seed(cfg.seed, SeedTag::CopyCorpus),
        )
    }
}

/// Fits the configured stealer on (query, response) pairs.
pub fn fit_stealer(
    cfg: &ExperimentConfig,
    queries: &[String],
    responses: &[Embedding],
) -> Result<StealerModel> {
    let featurizer = StealerFeaturizer {
        feature_dim: cfg.stealer.feature_dim,
        hash_seed: derive_seed(cfg.seed, SeedTag::StealerHash),
    };
    match cfg.stealer.kind {
        StealerKind::Linear { ridge_lambda } => {
            fit_linear(featurizer, queries, responses, ridge_lambda)
        }
        StealerKind::Mlp {
            hidden_size,
            epochs,
            learning_rate,
            batch_size,
        } => fit_mlp(
            featurizer,
            queries,
            responses,
            MlpTraining {
                hidden_size,
                epochs,
                learning_rate,
                batch_size,
                seed: derive_seed(cfg.seed, SeedTag::StealerInit),
            },
        )
        .map(|fit| fit.model),
    }
}

/// Probe sets for `cfg` with `trigger_words` triggers in each backdoor text.
pub fn probe_sets(
    cfg: &ExperimentConfig,
    triggers: &TriggerSet,
    table: &FrequencyTable,
    trigger_words: usize,
) -> Result<ProbeSets> {
    let vt = verification_triggers(cfg, triggers, table);
    // A rare-token probe holds the token once, padded with benign words.
    let k = if cfg.baseline == Baseline::RedAlarm {
        trigger_words.min(1)
    } else {
        trigger_words
    };
    build_mixed_probe_sets(
        &vt,
        table,
        cfg.watermark.m,
        k,
        cfg.probe_count,
        derive_seed(cfg.seed, SeedTag::Probes),
    )
}

/// The verifier's trigger set: the watermark triggers, or the rare token alone.
fn verification_triggers(
    cfg: &ExperimentConfig,
    triggers: &TriggerSet,
    table: &FrequencyTable,
) -> TriggerSet {
    match cfg.baseline {
        Baseline::RedAlarm => TriggerSet {
            triggers: vec![RARE_TOKEN.to_string()],
            interval: triggers.interval,
            seed: triggers.seed,
            frequencies: vec![table.frequency(RARE_TOKEN)],
        },
        _ => triggers.clone(),
    }
}

/// All intermediate artifacts of one experiment, up to a fitted stealer.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: ExperimentConfig,
    pub setup: VictimSetup,
    pub copy_corpus: LabeledCorpus,
    pub copy_responses: Vec<Embedding>,
    pub stealer: StealerModel,
    pub stealer_training_mse: f64,
    pub probes: ProbeSets,
    pub timings: Timings,
}

impl Prepared {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let mut timings = Timings::default();
        let setup = VictimSetup::build(cfg, &mut timings)?;
        let copy_corpus = timings
            .record("copy corpus", || VictimSetup::copy_corpus(cfg))
            .stage("copy corpus")?;
        let queries = copy_corpus.text_strings();
        let copy_responses = timings
            .record("victim queries", || setup.victim.embed_batch(&queries))
            .stage("victim queries")?;
        let stealer = timings
            .record("extraction", || fit_stealer(cfg, &queries, &copy_responses))
            .stage("extraction")?;
        let stealer_training_mse = mean_squared_error(&stealer, &queries, &copy_responses);
        let probes = probe_sets(cfg, &setup.triggers, &setup.frequencies, cfg.watermark.m)
            .stage("probe sets")?;
        Ok(Self {
            config: cfg.clone(),
            setup,
            copy_corpus,
            copy_responses,
            stealer,
            stealer_training_mse,
            probes,
            timings,
        })
    }

    /// Probe sets for the current config with `trigger_words` triggers per backdoor text.
    pub fn probes_for(&self, trigger_words: usize) -> Result<ProbeSets> {
        probe_sets(
            &self.config,
            &self.setup.triggers,
            &self.setup.frequencies,
            trigger_words,
        )
    }

    /// The stealer's service as seen by the verifier, after any evasion transform.
    pub fn suspect(&self) -> impl EmbeddingService + '_ {
        wrap_service(&self.stealer, self.config.attack.build(self.config.dim))
    }

    pub fn verify_suspect<S: EmbeddingService + ?Sized>(
        &self,
        suspect: &S,
        probes: &ProbeSets,
    ) -> Result<VerificationReport> {
        match self.config.verification {
            VerificationMode::Base => verify_against(
                suspect,
                &self.setup.watermark.target,
                self.setup.watermark.threshold_tau,
                probes,
                VerificationMode::Base,
            ),
            VerificationMode::Modified => verify_modified(
                suspect,
                &self.setup.target_sample,
                &self.setup.watermark,
                probes,
            ),
        }
    }

    /// Δcos against the suspect for probes holding exactly `k` triggers, `k = 0..=max`.
    pub fn trigger_count_curve(&self, max: usize) -> Result<Vec<CurvePoint>> {
        let suspect = self.suspect();
        (0..=max)
            .map(|k| {
                let probes = self.probes_for(k)?;
                let r = self.verify_suspect(&suspect, &probes)?;
                Ok(CurvePoint {
                    triggers: k,
                    delta_cos: r.delta_cos,
                })
            })
            .collect()
    }

    /// Held-out accuracy on the copy corpus with original vs provided embeddings.
    pub fn utility(&self) -> Result<Utility> {
        let labels = self.copy_corpus.labels();
        let seed = derive_seed(self.config.seed, SeedTag::Classifier);
        let original: Vec<Embedding> = self
            .copy_corpus
            .texts
            .iter()
            .map(|(t, _)| self.setup.victim.model.embed_original(t))
            .collect();
        Ok(Utility {
            original: train_downstream_classifier(
                &original,
                &labels,
                seed,
                &self.config.classifier,
            )?,
            provided: train_downstream_classifier(
                &self.copy_responses,
                &labels,
                seed,
                &self.config.classifier,
            )?,
        })
    }

    pub fn evaluate(mut self) -> Result<ExperimentReport> {
        let mut timings = std::mem::take(&mut self.timings);
        let verification = timings
            .record("verification", || {
                let suspect = self.suspect();
                self.verify_suspect(&suspect, &self.probes)
            })
            .stage("verification")?;
        let trigger_curve = if self.config.trigger_curve
            && self.config.baseline != Baseline::RedAlarm
        {
            timings
                .record("trigger curve", || {
                    self.trigger_count_curve(self.config.watermark.m.min(self.setup.triggers.len()))
                })
                .stage("trigger curve")?
        } else {
            Vec::new()
        };
        let utility = if self.config.measure_utility {
            Some(
                timings
                    .record("utility", || self.utility())
                    .stage("utility")?,
            )
        } else {
            None
        };
        Ok(ExperimentReport {
            rare_trigger: (self.config.baseline == Baseline::RedAlarm)
                .then(|| RARE_TOKEN.to_string()),
            triggers: self.setup.triggers.triggers.clone(),
            config: self.config,
            verification,
            utility,
            stealer_training_mse: self.stealer_training_mse,
            trigger_curve,
            timings,
        })
    }
}

/// Runs the whole pipeline: corpora, triggers, watermarked provider, extraction,
/// optional evasion, verification and downstream utility.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    Prepared::new(cfg)?.evaluate()
}
