use serde::{Deserialize, Serialize};

use super::{Matrix, NumericsError};

/// Per-column min/max used for min-max scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormalizationParams {
    pub fn columns(&self) -> usize {
        self.min.len()
    }

    pub fn normalize_value(&self, col: usize, x: f64) -> f64 {
        let span = self.max[col] - self.min[col];
        if span == 0.0 {
            0.0
        } else {
            (x - self.min[col]) / span
        }
    }

    /// Inverse of [`normalize_value`](Self::normalize_value); a constant column maps back to its value.
    pub fn denormalize_value(&self, col: usize, z: f64) -> f64 {
        self.min[col] + z * (self.max[col] - self.min[col])
    }

    /// Fits parameters over every column of `m`.
    pub fn fit(m: &Matrix) -> Result<Self, NumericsError> {
        if m.rows() == 0 {
            return Err(NumericsError::Empty("normalization input"));
        }
        m.check_finite()?;
        let mut min = vec![f64::INFINITY; m.cols()];
        let mut max = vec![f64::NEG_INFINITY; m.cols()];
        for i in 0..m.rows() {
            for (j, &v) in m.row(i).iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        Ok(Self { min, max })
    }

    pub fn apply(&self, m: &Matrix) -> Matrix {
        Matrix::from_fn(m.rows(), m.cols(), |i, j| {
            self.normalize_value(j, m[(i, j)])
        })
    }
}

/// Scales one column into `[0, 1]`; a constant column maps to zeros.
pub fn min_max_normalize(column: &[f64]) -> Result<(Vec<f64>, NormalizationParams), NumericsError> {
    if column.is_empty() {
        return Err(NumericsError::Empty("column"));
    }
    if let Some(row) = column.iter().position(|v| !v.is_finite()) {
        return Err(NumericsError::NonFinite { row, col: 0 });
    }
    let min = column.iter().copied().fold(f64::INFINITY, f64::min);
    let max = column.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let params = NormalizationParams {
        min: vec![min],
        max: vec![max],
    };
    let out = column
        .iter()
        .map(|&x| params.normalize_value(0, x))
        .collect();
    Ok((out, params))
}

pub fn denormalize(values: &[f64], params: &NormalizationParams) -> Vec<f64> {
    values
        .iter()
        .map(|&z| params.denormalize_value(0, z))
        .collect()
}
