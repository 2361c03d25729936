//! Dense linear algebra, normalization and evaluation metrics shared by the agents.

mod expm;
mod matrix;
mod metrics;
mod normalize;

pub use expm::{mat_exp, mat_exp_with_report, ExpmReport};
pub use matrix::Matrix;
pub use metrics::{
    adjusted_rand_index, clustering_metrics, cosine_sim, regression_metrics, ClusterReport,
    RegressionReport,
};
pub use normalize::{denormalize, min_max_normalize, NormalizationParams};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumericsError {
    #[error("shape mismatch: expected {expected}, found {found}")]
    Shape { expected: String, found: String },
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("clustering metrics need at least two clusters")]
    SingleCluster,
}
