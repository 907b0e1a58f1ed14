//! Evaluation battery for joint volume/tabular synthesis: embedding-space
//! Fréchet distance and alpha-precision/beta-recall for volumes; Sinkhorn
//! divergence, two-sample detection score, univariate KS/TV distance and
//! mixed-pair correlation distance for tables. Every metric has a brute-force
//! reference implementation in [`reference`] used by the test suites.

mod alphabeta;
mod assoc;
mod detection;
mod embed;
mod evaluate;
mod featurize;
mod frechet;
pub mod linalg;
pub mod reference;
mod report;
mod sinkhorn;
mod univariate;

pub use alphabeta::{alpha_precision_beta_recall, default_level_grid, PrecisionRecallCurves};
pub use assoc::{association, correlation_distance, AssociationKind, Column, CorrelationBreakdown};
pub use detection::detection_score;
pub use embed::{embed_volumes, FeatureMatrix};
pub use evaluate::{evaluate_all, EvalConfig};
pub use featurize::{featurize, FeaturizeStats, MixedTable};
pub use frechet::frechet_distance;
pub use report::{MetricValue, MetricsReport};
pub use sinkhorn::{sinkhorn_divergence, Epsilon, SinkhornOutcome};
pub use univariate::{ks_distance, tv_distance, univariate_distance};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("input error: {0}")]
    Input(String),

    #[error("schema mismatch between real and synthetic tables: {0}")]
    SchemaMismatch(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("unknown label `{0}` outside the declared vocabulary")]
    UnknownLabel(String),

    #[error("too few rows: {0}")]
    TooFewRows(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error(transparent)]
    Tabular(#[from] jointsynth_tabular::TabularError),
}

pub type Result<T> = std::result::Result<T, MetricsError>;
