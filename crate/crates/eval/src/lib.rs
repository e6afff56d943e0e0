//! Offline evaluation toolkit for landslide image classifiers.
//!
//! Everything here is a pure function over immutable inputs: binary
//! confusion-matrix metrics, Fleiss' kappa for multi-rater labeling,
//! labeled-manifest statistics and class balancing, and aggregation of
//! hyperparameter sweep results (leaderboards, architecture rankings,
//! factor effect tables and paired win counts).

pub mod aggregate;
pub mod confusion;
mod error;
pub mod kappa;
pub mod manifest;
pub mod stats;
pub mod sweep;

pub use aggregate::{
    architecture_summary, factor_effect_table, leaderboard, paired_win_count, ArchitectureSummary,
    EffectFactor, EffectRow, PairFactor, WinCount,
};
pub use confusion::{metrics_from_confusion, ConfusionMatrix, Metrics};
pub use error::EvalError;
pub use kappa::{fleiss_kappa, AnnotationMatrix};
pub use manifest::{
    balanced_manifest, manifest_stats, BalancedSplit, Label, LabeledManifest, ManifestEntry,
    ManifestStats, Source, Split,
};
pub use stats::{round_half_up, StdKind};
pub use sweep::{Optimizer, RunRecord, SweepGrid};

pub type Result<T, E = EvalError> = std::result::Result<T, E>;
