//! Windowing, minibatch AdamW training and inference wrappers.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{GridLstmModel, ModelConfig};
use super::network::{backward, forward_trace};
use super::{SeriesWindow, TemporalError};
use crate::data::TimeSeriesDataset;
use crate::numerics::{Matrix, NormalizationParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub window: usize,
    pub seed: u64,
    pub hidden: usize,
    pub layers: usize,
    pub share_decoder_cells: bool,
    /// Column forecast one step ahead; `None` means the last column.
    pub target_column: Option<usize>,
    /// Stop after this many epochs without a validation improvement.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            learning_rate: 1e-3,
            weight_decay: 1e-5,
            batch_size: 200,
            window: 12,
            seed: 0,
            hidden: 16,
            layers: 2,
            share_decoder_cells: false,
            target_column: None,
            patience: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TemporalError> {
        let bad = |what: &str| Err(TemporalError::InvalidConfig(what.into()));
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be finite and nonnegative");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight decay must be finite and nonnegative");
        }
        if self.batch_size == 0 || self.window == 0 || self.hidden == 0 || self.layers == 0 {
            return bad("batch size, window, hidden size and layers must be positive");
        }
        if self.patience == Some(0) {
            return bad("patience must be positive");
        }
        Ok(())
    }

    pub fn model_config(&self, features: usize) -> ModelConfig {
        ModelConfig {
            features,
            hidden: self.hidden,
            layers: self.layers,
            share_decoder_cells: self.share_decoder_cells,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean squared error over the training windows seen this epoch (normalized scale).
    pub train_loss: f64,
    /// Mean squared error over validation windows after the epoch's updates.
    pub val_loss: f64,
}

/// Windows grouped by chronological split, with the dataset row each target comes from.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSplits {
    pub train: Vec<SeriesWindow>,
    pub val: Vec<SeriesWindow>,
    pub test: Vec<SeriesWindow>,
    pub train_rows: Vec<usize>,
    pub val_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
}

impl WindowSplits {
    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn resolve_target(
    dataset: &TimeSeriesDataset,
    target: Option<usize>,
) -> Result<usize, TemporalError> {
    let col = target.unwrap_or(dataset.features() - 1);
    if col >= dataset.features() {
        return Err(TemporalError::InvalidConfig(format!(
            "target column {col} out of range for {} features",
            dataset.features()
        )));
    }
    Ok(col)
}

/// Builds one-step-ahead windows over normalized values.
///
/// A window spans rows `[s, s + window)` and targets row `s + window`; it is kept only when
/// all of those rows are valid. Splits are chronological by target row.
pub fn make_windows(
    dataset: &TimeSeriesDataset,
    window: usize,
    target_column: Option<usize>,
) -> Result<WindowSplits, TemporalError> {
    if window == 0 {
        return Err(TemporalError::InvalidConfig(
            "window must be positive".into(),
        ));
    }
    let target = resolve_target(dataset, target_column)?;
    let rows = dataset.len();
    if rows <= window {
        return Err(TemporalError::InsufficientData(format!(
            "{rows} rows cannot fill a window of {window} plus a target"
        )));
    }
    let norm = dataset.normalized();
    let n_train = (dataset.splits.train * rows as f64).round() as usize;
    let n_val = (dataset.splits.val * rows as f64).round() as usize;
    let mut out = WindowSplits {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        train_rows: Vec::new(),
        val_rows: Vec::new(),
        test_rows: Vec::new(),
    };
    let mut run = 0usize;
    for r in 0..rows {
        run = if dataset.valid[r] { run + 1 } else { 0 };
        if r < window || run < window + 1 {
            continue;
        }
        let start = r - window;
        let values = Matrix::from_fn(window, dataset.features(), |i, j| norm[(start + i, j)]);
        let w = SeriesWindow {
            values,
            target: norm[(r, target)],
        };
        if r < n_train {
            out.train.push(w);
            out.train_rows.push(r);
        } else if r < n_train + n_val {
            out.val.push(w);
            out.val_rows.push(r);
        } else {
            out.test.push(w);
            out.test_rows.push(r);
        }
    }
    if out.is_empty() {
        return Err(TemporalError::InsufficientData(
            "no window is free of invalid rows".into(),
        ));
    }
    Ok(out)
}

struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamW {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, wd: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            let update = (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
            *p -= lr * (update + wd * *p);
        }
    }
}

fn mean_squared_error(
    model: &GridLstmModel,
    windows: &[SeriesWindow],
) -> Result<f64, TemporalError> {
    let mut sum = 0.0;
    for w in windows {
        let e = forward_trace(model, w)?.yhat - w.target;
        sum += e * e;
    }
    Ok(sum / windows.len().max(1) as f64)
}

/// Result of [`train_on_windows`]: the best-validation model and the per-epoch history.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model: GridLstmModel,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// Trains on prepared windows. With no validation windows, the training loss selects the model.
pub fn train_on_windows(
    train: &[SeriesWindow],
    val: &[SeriesWindow],
    features: usize,
    cfg: &TrainConfig,
) -> Result<TrainedModel, TemporalError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TemporalError::InsufficientData(
            "no training windows".into(),
        ));
    }
    let mut model = GridLstmModel::init(cfg.model_config(features), cfg.seed)?;
    let mut opt = AdamW::new(model.param_count());
    // separate stream from the one that drew the initial weights
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut sample_loss = vec![0.0; train.len()];
    let mut grad = vec![0.0; model.param_count()];
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best = (model.clone(), usize::MAX, f64::INFINITY);
    let mut since_best = 0usize;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                let w = &train[i];
                let trace = forward_trace(&model, w)?;
                let err = trace.yhat - w.target;
                sample_loss[i] = err * err;
                backward(&model, &trace, 2.0 * err, &mut grad);
            }
            let inv = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= inv);
            opt.step(
                model.params_mut(),
                &grad,
                cfg.learning_rate,
                cfg.weight_decay,
            );
            if !model.params().iter().all(|p| p.is_finite()) {
                return Err(TemporalError::NonFinite);
            }
        }
        // summed in sample order so the figure does not depend on the shuffle
        let train_loss = sample_loss.iter().sum::<f64>() / train.len() as f64;
        let val_loss = if val.is_empty() {
            mean_squared_error(&model, train)?
        } else {
            mean_squared_error(&model, val)?
        };
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        if val_loss < best.2 {
            best = (model.clone(), epoch, val_loss);
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience.is_some_and(|p| since_best >= p) {
                break;
            }
        }
    }
    let (model, best_epoch, best_val_loss) = best;
    Ok(TrainedModel {
        model,
        history,
        best_epoch,
        best_val_loss,
    })
}

/// A trained model bundled with what is needed to forecast on raw readings.
#[derive(Debug, Clone, PartialEq)]
pub struct Forecaster {
    pub model: GridLstmModel,
    pub normalization: NormalizationParams,
    pub feature_names: Vec<String>,
    pub target_column: usize,
    pub window: usize,
}

impl Forecaster {
    /// Forecast on the original scale for an already normalized window.
    pub fn predict(&self, window: &SeriesWindow) -> Result<f64, TemporalError> {
        let z = predict(&self.model, window)?;
        Ok(self.normalization.denormalize_value(self.target_column, z))
    }

    /// Forecast from raw readings (`window × features`), normalizing them first.
    pub fn predict_raw(&self, rows: &Matrix) -> Result<f64, TemporalError> {
        if rows.cols() != self.normalization.columns() {
            return Err(TemporalError::Shape(format!(
                "expected {} features, got {}",
                self.normalization.columns(),
                rows.cols()
            )));
        }
        let values = self.normalization.apply(rows);
        self.predict(&SeriesWindow::new(values, 0.0)?)
    }

    /// One-step-ahead forecasts for every window target row in `[from, to)` of `dataset`,
    /// as `(row, actual, predicted)` on the original scale.
    pub fn backtest(
        &self,
        dataset: &TimeSeriesDataset,
        from: usize,
        to: usize,
    ) -> Result<Vec<(usize, f64, f64)>, TemporalError> {
        if dataset.features() != self.model.features() {
            return Err(TemporalError::Shape(format!(
                "dataset has {} features, model expects {}",
                dataset.features(),
                self.model.features()
            )));
        }
        let norm = self.normalization.apply(&dataset.values);
        let to = to.min(dataset.len());
        let mut out = Vec::new();
        for r in from.max(self.window)..to {
            if !(r - self.window..=r).all(|i| dataset.valid[i]) {
                continue;
            }
            let values = Matrix::from_fn(self.window, dataset.features(), |i, j| {
                norm[(r - self.window + i, j)]
            });
            let yhat = self.predict(&SeriesWindow {
                values,
                target: 0.0,
            })?;
            out.push((r, dataset.values[(r, self.target_column)], yhat));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub forecaster: Forecaster,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub splits: WindowSplits,
}

/// Windows the dataset, trains, and returns the best-validation forecaster.
pub fn train(
    dataset: &TimeSeriesDataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TemporalError> {
    cfg.validate()?;
    let target_column = resolve_target(dataset, cfg.target_column)?;
    let splits = make_windows(dataset, cfg.window, Some(target_column))?;
    let trained = train_on_windows(&splits.train, &splits.val, dataset.features(), cfg)?;
    Ok(TrainOutcome {
        forecaster: Forecaster {
            model: trained.model,
            normalization: dataset.normalization.clone(),
            feature_names: dataset.feature_names.clone(),
            target_column,
            window: cfg.window,
        },
        history: trained.history,
        best_epoch: trained.best_epoch,
        best_val_loss: trained.best_val_loss,
        splits,
    })
}

/// Normalized-scale prediction for one window.
pub fn predict(model: &GridLstmModel, window: &SeriesWindow) -> Result<f64, TemporalError> {
    Ok(forward_trace(model, window)?.yhat)
}

pub fn predict_batch(
    model: &GridLstmModel,
    windows: &[SeriesWindow],
) -> Result<Vec<f64>, TemporalError> {
    windows.iter().map(|w| predict(model, w)).collect()
}
