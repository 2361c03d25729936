//! Heat-diffusion node-pair similarity within one graph or across two graphs.
//!
//! The pair temperature matrix obeys `dT/dt = Q·T + T·P` with
//! `Q = (λ/2)(Aᵀ·diag(d₁⁺)⁻¹ − I)` and `P = (λ/2)(diag(d₂⁺)⁻¹·B − I)`, so at unit time
//! `T = e^Q·T₀·e^P`. The initial temperature mixes an out-degree term and known relations:
//! `T₀ = θ/(m₁m₂)·d₁⁺(d₂⁺)ᵀ + (1−θ)/n_{S₀}·S₀`, where `n_{S₀}` counts nonzero entries of `S₀`.
//!
//! `Aᵀ·diag(d⁺)⁻¹` is column-stochastic and `diag(d⁺)⁻¹·B` row-stochastic, so the total heat
//! `Σ T` is conserved by the flow.

use serde::{Deserialize, Serialize};

use super::{SensorGraph, SimilarityKind, SimilarityMatrix, SpatialError};
use crate::numerics::{mat_exp, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiffusionConfig {
    /// Damping factor λ in (0, 1]; 0 is accepted and disables diffusion.
    pub lambda: f64,
    /// Weight θ of the out-degree term.
    pub theta: f64,
    /// Known node-pair relations, `|G₁| × |G₂|`. Defaults to the identity for a single graph.
    pub s0: Option<Matrix>,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            lambda: 0.8,
            theta: 0.5,
            s0: None,
        }
    }
}

impl DiffusionConfig {
    pub fn with_s0(mut self, s0: Matrix) -> Self {
        self.s0 = Some(s0);
        self
    }

    pub fn validate(&self) -> Result<(), SpatialError> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(SpatialError::Invalid(format!(
                "lambda {} outside [0,1]",
                self.lambda
            )));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(SpatialError::Invalid(format!(
                "theta {} outside [0,1]",
                self.theta
            )));
        }
        Ok(())
    }
}

/// `Q` for the left graph: `(λ/2)(Aᵀ·diag(d⁺)⁻¹ − I)`.
pub fn left_generator(g: &SensorGraph, lambda: f64) -> Matrix {
    let n = g.len();
    let h = lambda / 2.0;
    Matrix::from_fn(n, n, |x, y| {
        let walk = g.adjacency[(y, x)] / g.out_degrees[y];
        h * (walk - if x == y { 1.0 } else { 0.0 })
    })
}

/// `P` for the right graph: `(λ/2)(diag(d⁺)⁻¹·B − I)`.
pub fn right_generator(g: &SensorGraph, lambda: f64) -> Matrix {
    let n = g.len();
    let h = lambda / 2.0;
    Matrix::from_fn(n, n, |x, y| {
        let walk = g.adjacency[(x, y)] / g.out_degrees[x];
        h * (walk - if x == y { 1.0 } else { 0.0 })
    })
}

/// The two terms of `T₀` separately: `(θ/(m₁m₂))·d₁⁺(d₂⁺)ᵀ` and `((1−θ)/n_{S₀})·S₀`.
pub fn initial_temperature_terms(
    g1: &SensorGraph,
    g2: &SensorGraph,
    theta: f64,
    s0: &Matrix,
) -> Result<(Matrix, Matrix), SpatialError> {
    check_degrees(g1)?;
    check_degrees(g2)?;
    if s0.rows() != g1.len() || s0.cols() != g2.len() {
        return Err(SpatialError::Invalid(format!(
            "S0 is {}x{}, graphs have {} and {} nodes",
            s0.rows(),
            s0.cols(),
            g1.len(),
            g2.len()
        )));
    }
    s0.check_finite().map_err(SpatialError::Numerics)?;
    if s0.as_slice().iter().any(|&v| v < 0.0) {
        return Err(SpatialError::Invalid(
            "S0 entries must be nonnegative".into(),
        ));
    }
    let scale = theta / (g1.edge_count as f64 * g2.edge_count as f64);
    let degree = Matrix::from_fn(g1.len(), g2.len(), |x, y| {
        scale * g1.out_degrees[x] * g2.out_degrees[y]
    });
    let n_s0 = s0.as_slice().iter().filter(|&&v| v != 0.0).count();
    let relations = if theta < 1.0 {
        if n_s0 == 0 {
            return Err(SpatialError::EmptyRelations);
        }
        s0.scale((1.0 - theta) / n_s0 as f64)
    } else {
        Matrix::zeros(g1.len(), g2.len())
    };
    Ok((degree, relations))
}

fn check_degrees(g: &SensorGraph) -> Result<(), SpatialError> {
    match g.out_degrees.iter().position(|&d| !(d > 0.0)) {
        Some(x) => Err(SpatialError::ZeroOutDegree(g.nodes[x].id.clone())),
        None => Ok(()),
    }
}

/// Node-pair similarity between `g1` and `g2`, `|G₁| × |G₂|`.
pub fn cosimheat_cross(
    g1: &SensorGraph,
    g2: &SensorGraph,
    cfg: &DiffusionConfig,
) -> Result<SimilarityMatrix, SpatialError> {
    cfg.validate()?;
    let s0 = match &cfg.s0 {
        Some(s) => s.clone(),
        None if g1.len() == g2.len() => Matrix::identity(g1.len()),
        None => {
            return Err(SpatialError::Invalid(
                "graphs of different sizes need an explicit S0".into(),
            ))
        }
    };
    let (degree, relations) = initial_temperature_terms(g1, g2, cfg.theta, &s0)?;
    let t0 = degree.add(&relations);
    if cfg.lambda == 0.0 {
        return SimilarityMatrix::new(t0, SimilarityKind::CrossGraph);
    }
    let eq = mat_exp(&left_generator(g1, cfg.lambda)).map_err(SpatialError::Numerics)?;
    let ep = mat_exp(&right_generator(g2, cfg.lambda)).map_err(SpatialError::Numerics)?;
    SimilarityMatrix::new(eq.matmul(&t0).matmul(&ep), SimilarityKind::CrossGraph)
}

/// Within-graph similarity: the cross-graph form with `B = A` (and `S₀ = I` unless given).
pub fn cosimheat_single(
    g: &SensorGraph,
    cfg: &DiffusionConfig,
) -> Result<SimilarityMatrix, SpatialError> {
    let mut out = cosimheat_cross(g, g, cfg)?;
    out.kind = SimilarityKind::Diffused;
    Ok(out)
}
