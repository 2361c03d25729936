//! Temporal agent: attentional Grid LSTM forecaster.

mod cell;
mod checkpoint;
mod model;
mod network;
mod ops;
mod train;

pub use cell::{grid_cell_backward, grid_cell_step, CellState};
pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use model::{CellLayout, GridLstmModel, Layout, ModelConfig, Seg};
pub use network::{
    cross_attention, decode, encode, feature_attention, forward, loss_and_gradient, CrossAttention,
    EncoderOutput,
};
pub use train::{
    make_windows, predict, predict_batch, train, train_on_windows, EpochRecord, Forecaster,
    TrainConfig, TrainOutcome, TrainedModel, WindowSplits,
};

use serde::{Deserialize, Serialize};

use crate::numerics::Matrix;

/// `T × N` input window (already normalized) with its one-step-ahead target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesWindow {
    pub values: Matrix,
    pub target: f64,
}

impl SeriesWindow {
    pub fn new(values: Matrix, target: f64) -> Result<Self, TemporalError> {
        if values.rows() == 0 || values.cols() == 0 {
            return Err(TemporalError::Shape("window must be at least 1x1".into()));
        }
        Ok(Self { values, target })
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }
}

/// Feature-attention weights, `T × N`; each row is a softmax over features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionWeights {
    pub alpha: Matrix,
}

#[derive(Debug, thiserror::Error)]
pub enum TemporalError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("not enough data: {0}")]
    InsufficientData(String),
    #[error("parameters contain non-finite values")]
    NonFinite,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
