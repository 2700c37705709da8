//! Frozen-encoder linear probing and the evaluation harness.

pub mod auc;
pub mod embed;
pub mod experiments;
pub mod linear;
pub mod split;

pub use auc::auc;
pub use embed::{embed_corpus, embed_segments, prepare_probe_segments, raw_features};
pub use experiments::{
    ablation_variants, data_regime_sweep, dropout_robustness, probe_task, run_splits, write_reports, DropoutBin, MIN_BIN_PER_CLASS, ProbeData, ProbeReport,
    ProbeSettings,
};
pub use linear::{train_linear_probe, LinearProbe, ProbeFit, ProbeHyper};
pub use split::{stratified_split, subsample_stratified, Split};
