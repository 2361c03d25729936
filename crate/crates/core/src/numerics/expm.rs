//! Matrix exponential by scaling and squaring over a truncated Taylor series.

use super::{Matrix, NumericsError};

/// `‖M‖₁` is scaled below this bound before the series is summed.
const SCALED_NORM_BOUND: f64 = 0.5;
/// Series is truncated once a term's largest entry falls below this.
const TERM_TOLERANCE: f64 = 1e-16;
const MAX_TERMS: usize = 64;

/// Diagnostics from one [`mat_exp_with_report`] call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpmReport {
    /// Number of squarings applied after the series.
    pub squarings: u32,
    /// Number of Taylor terms summed (including the identity).
    pub terms: usize,
    /// `‖next term‖∞ / ‖partial sum‖∞` for the scaled matrix.
    pub relative_tail: f64,
}

/// Computes `e^M`.
pub fn mat_exp(m: &Matrix) -> Result<Matrix, NumericsError> {
    mat_exp_with_report(m).map(|(e, _)| e)
}

pub fn mat_exp_with_report(m: &Matrix) -> Result<(Matrix, ExpmReport), NumericsError> {
    if !m.is_square() {
        return Err(NumericsError::NotSquare {
            rows: m.rows(),
            cols: m.cols(),
        });
    }
    m.check_finite()?;
    let n = m.rows();

    let norm = m.norm_one();
    let mut squarings = 0u32;
    let mut scaled_norm = norm;
    while scaled_norm >= SCALED_NORM_BOUND {
        scaled_norm /= 2.0;
        squarings += 1;
    }
    let a = m.scale(0.5f64.powi(squarings as i32));

    let mut sum = Matrix::identity(n);
    let mut term = Matrix::identity(n);
    let mut terms = 1;
    let mut k = 1usize;
    loop {
        term = term.matmul(&a).scale(1.0 / k as f64);
        sum.add_scaled(&term, 1.0);
        terms += 1;
        k += 1;
        if term.max_abs() < TERM_TOLERANCE || terms >= MAX_TERMS {
            break;
        }
    }
    let next = term.matmul(&a).scale(1.0 / k as f64);
    let relative_tail = next.norm_inf() / sum.norm_inf().max(f64::MIN_POSITIVE);

    for _ in 0..squarings {
        sum = sum.matmul(&sum);
    }
    sum.check_finite()?;
    Ok((
        sum,
        ExpmReport {
            squarings,
            terms,
            relative_tail,
        },
    ))
}
