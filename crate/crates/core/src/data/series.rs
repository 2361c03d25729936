use serde::{Deserialize, Serialize};

use super::DataError;
use crate::numerics::{Matrix, NormalizationParams};

/// Chronological split fractions; must sum to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.7,
            val: 0.15,
            test: 0.15,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<(), DataError> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|p| !(0.0..=1.0).contains(p))
            || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(DataError::Invalid(format!(
                "split fractions must be in [0,1] and sum to 1: {self:?}"
            )));
        }
        Ok(())
    }
}

/// A multivariate series: rows are timesteps, columns are features.
///
/// `values` holds raw readings after gap filling; rows that could not be filled are marked
/// in `valid` and are excluded from any window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesDataset {
    pub id: String,
    /// Unix seconds, strictly increasing.
    pub timestamps: Vec<i64>,
    pub feature_names: Vec<String>,
    pub values: Matrix,
    pub valid: Vec<bool>,
    /// Sensor the series was recorded by, when known.
    pub sensor_id: Option<String>,
    pub normalization: NormalizationParams,
    pub splits: SplitFractions,
}

impl TimeSeriesDataset {
    /// Validates the invariants and fits normalization over the valid rows.
    pub fn new(
        id: impl Into<String>,
        timestamps: Vec<i64>,
        feature_names: Vec<String>,
        values: Matrix,
        valid: Option<Vec<bool>>,
    ) -> Result<Self, DataError> {
        let id = id.into();
        if values.rows() != timestamps.len() {
            return Err(DataError::Invalid(format!(
                "{} timestamps for {} rows",
                timestamps.len(),
                values.rows()
            )));
        }
        if values.cols() != feature_names.len() || values.cols() == 0 {
            return Err(DataError::Invalid(format!(
                "{} feature names for {} columns",
                feature_names.len(),
                values.cols()
            )));
        }
        if let Some(i) = timestamps.windows(2).position(|w| w[1] <= w[0]) {
            return Err(DataError::NonMonotone { row: i + 1 });
        }
        let valid = valid.unwrap_or_else(|| vec![true; values.rows()]);
        if valid.len() != values.rows() {
            return Err(DataError::Invalid("validity mask length mismatch".into()));
        }
        let kept: Vec<Vec<f64>> = (0..values.rows())
            .filter(|&i| valid[i])
            .map(|i| values.row(i).to_vec())
            .collect();
        if kept.is_empty() {
            return Err(DataError::Invalid(format!(
                "dataset {id} has no valid rows"
            )));
        }
        let kept = Matrix::from_rows(&kept).map_err(|e| DataError::Invalid(e.to_string()))?;
        let normalization =
            NormalizationParams::fit(&kept).map_err(|e| DataError::Invalid(e.to_string()))?;
        Ok(Self {
            id,
            timestamps,
            feature_names,
            values,
            valid,
            sensor_id: None,
            normalization,
            splits: SplitFractions::default(),
        })
    }

    pub fn with_sensor(mut self, sensor: impl Into<String>) -> Self {
        self.sensor_id = Some(sensor.into());
        self
    }

    pub fn with_splits(mut self, splits: SplitFractions) -> Result<Self, DataError> {
        splits.validate()?;
        self.splits = splits;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }

    pub fn features(&self) -> usize {
        self.values.cols()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|f| f == name)
    }

    /// Min-max normalized copy of `values`.
    pub fn normalized(&self) -> Matrix {
        self.normalization.apply(&self.values)
    }

    /// Per-feature mean over valid rows (the sensor representation vector).
    pub fn feature_means(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.features()];
        let mut count = 0usize;
        for i in (0..self.len()).filter(|&i| self.valid[i]) {
            for (s, v) in sums.iter_mut().zip(self.values.row(i)) {
                *s += v;
            }
            count += 1;
        }
        sums.iter().map(|s| s / count.max(1) as f64).collect()
    }

    /// Row range `[start, end)` whose timestamps fall within `[from, to)`.
    pub fn time_range(&self, from: i64, to: i64) -> std::ops::Range<usize> {
        let start = self.timestamps.partition_point(|&t| t < from);
        let end = self.timestamps.partition_point(|&t| t < to);
        start..end
    }
}
