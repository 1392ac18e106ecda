//! End-to-end experiments, parameter sweeps, downstream utility and PCA output.

mod classifier;
mod config;
mod experiment;
mod pca;
mod sweep;

pub use classifier::{train_downstream_classifier, ClassifierConfig};
pub use config::{
    Baseline, CorpusConfig, ExperimentConfig, StealerConfig, StealerKind, WatermarkSettings,
};
pub use experiment::{
    fit_stealer, probe_sets, run_experiment, CurvePoint, ExperimentReport, Prepared, Timings,
    Utility, VictimSetup, RARE_TOKEN,
};
pub use pca::{pca2, Pca2, PcaPoint};
pub use sweep::{sweep, write_sweep_csv, SweepEntry, SweepParam, SweepValue};
