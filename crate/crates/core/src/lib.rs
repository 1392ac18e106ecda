//! Simulation toolkit for watermarking an embedding service with trigger-word
//! backdoors, stealing it by model extraction, and verifying the stolen copy
//! through black-box queries.
//!
//! The pipeline, module by module:
//!
//! - [`corpus`]: tokenization, document frequencies, trigger selection, synthetic data.
//! - [`embedder`]: the provider's mock embedding model and target embeddings.
//! - [`watermark`]: trigger-weighted injection (and the rare-token baseline).
//! - [`extraction`]: the stealer's ridge and MLP regressors.
//! - [`verification`]: probe sets, similarity statistics and the KS test.
//! - [`transforms`]: similarity-invariant evasion transforms.
//! - [`harness`]: end-to-end experiments, sweeps, utility and PCA output.

pub mod corpus;
pub mod embedder;
pub mod error;
pub mod extraction;
pub mod harness;
mod hash;
pub mod service;
pub mod transforms;
pub mod vector;
pub mod verification;
pub mod watermark;

pub use corpus::{
    build_frequency_table, generate_synthetic_corpus, select_triggers, tokenize, FrequencyInterval,
    FrequencyTable, LabeledCorpus, TokenSet, TriggerSet,
};
pub use embedder::{make_target_embedding, Embedding, ProviderModel, ProviderParams, TargetMode};
pub use error::{Error, Result, ZeroSource};
pub use extraction::{fit_linear, fit_mlp, stealer_embed, StealerFeaturizer, StealerModel};
pub use service::{EmbeddingService, FnService};
pub use transforms::{check_invariance, wrap_service, Transform, TransformSpec};
pub use verification::{
    build_probe_sets, delta_metrics, ks_two_sample, similarity_sets, verify, verify_modified,
    ProbeSets, SimilaritySets, VerificationMode, VerificationReport,
};
pub use watermark::{
    inject, provide, redalarm_provide, trigger_weight, Scheme, VictimService, WatermarkConfig,
};
