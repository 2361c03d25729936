//! Island-model parallel genetic algorithm over binary-encoded integer hyperparameters.

mod codec;
mod ga;

pub use codec::{Chromosome, Codec, GeneSpec, Params};
pub use ga::{
    evolve_subpopulation, migrate, run_pga, tournament_select, trace_from_jsonl, trace_to_jsonl,
    vary, Evaluator, FitnessFn, FitnessRecord, PgaConfig, PgaFailure, PgaOutcome, TraceRecord,
};

use crate::data::TimeSeriesDataset;
use crate::temporal::{train, TrainConfig};

/// Default search space: hidden units in `[1, 512]`.
pub fn default_codec() -> Codec {
    Codec::new(vec![GeneSpec::new("hidden_units", 1, 512)]).expect("valid default codec")
}

/// Fitness that trains a forecaster and returns its best validation RMSE (normalized scale).
///
/// Recognized genes override the base config: `hidden_units`, `window`, `epochs`,
/// `batch_size`, `layers`. Unknown genes are rejected.
pub fn forecaster_fitness<'a>(
    dataset: &'a TimeSeriesDataset,
    base: &'a TrainConfig,
) -> impl Fn(&Params) -> Result<f64, String> + Sync + 'a {
    move |params: &Params| {
        let cfg = apply_params(base, params)?;
        let outcome = train(dataset, &cfg).map_err(|e| e.to_string())?;
        Ok(outcome.best_val_loss.sqrt())
    }
}

/// A copy of `base` with the recognized genes of `params` applied.
pub fn apply_params(base: &TrainConfig, params: &Params) -> Result<TrainConfig, String> {
    let mut cfg = base.clone();
    for (name, &v) in params {
        let v = usize::try_from(v).map_err(|_| format!("gene {name} = {v} must be nonnegative"))?;
        match name.as_str() {
            "hidden_units" => cfg.hidden = v,
            "window" => cfg.window = v,
            "epochs" => cfg.epochs = v,
            "batch_size" => cfg.batch_size = v,
            "layers" => cfg.layers = v,
            other => return Err(format!("gene {other} does not map to a training option")),
        }
    }
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HpoError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown hyperparameter {0}")]
    UnknownGene(String),
    #[error("hyperparameter {0} has no value")]
    MissingGene(String),
    #[error("hyperparameter {gene} = {value} is outside its range")]
    OutOfRange { gene: String, value: i64 },
    #[error("bit strings differ in length: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("population is empty")]
    EmptyPopulation,
    #[error("fitness evaluation failed for {params:?}: {message}")]
    Fitness { params: Params, message: String },
}
