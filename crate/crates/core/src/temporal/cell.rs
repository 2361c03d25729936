//! Two-dimensional grid LSTM cell.
//!
//! Both streams see the same concatenated hidden vector `H = [h_time; h_depth]`; each stream
//! owns its gate weights and memory:
//!
//! ```text
//! u, f, o = σ(W·H + b)   c = tanh(W·H + b)
//! m' = f ⊙ m + u ⊙ c     h' = o ⊙ tanh(m')
//! ```

use serde::{Deserialize, Serialize};

use super::model::{CellLayout, GridLstmModel, Seg};
use super::ops::{affine, outer_acc, sigmoid, transpose_acc};
use super::TemporalError;

/// Hidden and memory vectors of both streams entering or leaving a cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellState {
    pub h_time: Vec<f64>,
    pub m_time: Vec<f64>,
    pub h_depth: Vec<f64>,
    pub m_depth: Vec<f64>,
}

impl CellState {
    pub fn zeros(d: usize) -> Self {
        Self {
            h_time: vec![0.0; d],
            m_time: vec![0.0; d],
            h_depth: vec![0.0; d],
            m_depth: vec![0.0; d],
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct StreamCache {
    m_in: Vec<f64>,
    /// activated gates, `[u | f | o | c]`
    gates: Vec<f64>,
    tanh_m: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct CellCache {
    hcat: Vec<f64>,
    time: StreamCache,
    depth: StreamCache,
}

fn stream_forward(
    p: &[f64],
    w: Seg,
    b: Seg,
    hcat: &[f64],
    m_in: &[f64],
) -> (Vec<f64>, Vec<f64>, StreamCache) {
    let d = m_in.len();
    let mut z = vec![0.0; 4 * d];
    affine(w.of(p), Some(b.of(p)), hcat, &mut z);
    for v in &mut z[..3 * d] {
        *v = sigmoid(*v);
    }
    for v in &mut z[3 * d..] {
        *v = v.tanh();
    }
    let mut m_out = vec![0.0; d];
    let mut tanh_m = vec![0.0; d];
    let mut h_out = vec![0.0; d];
    for k in 0..d {
        let (u, f, o, c) = (z[k], z[d + k], z[2 * d + k], z[3 * d + k]);
        m_out[k] = f * m_in[k] + u * c;
        tanh_m[k] = m_out[k].tanh();
        h_out[k] = o * tanh_m[k];
    }
    (
        h_out,
        m_out,
        StreamCache {
            m_in: m_in.to_vec(),
            gates: z,
            tanh_m,
        },
    )
}

pub(crate) fn cell_forward(
    p: &[f64],
    cell: &CellLayout,
    input: &CellState,
) -> (CellState, CellCache) {
    let mut hcat = Vec::with_capacity(2 * input.h_time.len());
    hcat.extend_from_slice(&input.h_time);
    hcat.extend_from_slice(&input.h_depth);
    let (h_time, m_time, time) = stream_forward(p, cell.time_w, cell.time_b, &hcat, &input.m_time);
    let (h_depth, m_depth, depth) =
        stream_forward(p, cell.depth_w, cell.depth_b, &hcat, &input.m_depth);
    (
        CellState {
            h_time,
            m_time,
            h_depth,
            m_depth,
        },
        CellCache { hcat, time, depth },
    )
}

/// Backward of one stream; returns `dm_in` and accumulates into `dhcat` and the parameter gradient.
fn stream_backward(
    p: &[f64],
    g: &mut [f64],
    w: Seg,
    b: Seg,
    hcat: &[f64],
    cache: &StreamCache,
    dh_out: &[f64],
    dm_out: &[f64],
    dhcat: &mut [f64],
) -> Vec<f64> {
    let d = dh_out.len();
    let z = &cache.gates;
    let mut dz = vec![0.0; 4 * d];
    let mut dm_in = vec![0.0; d];
    for k in 0..d {
        let (u, f, o, c) = (z[k], z[d + k], z[2 * d + k], z[3 * d + k]);
        let tm = cache.tanh_m[k];
        let dm = dm_out[k] + dh_out[k] * o * (1.0 - tm * tm);
        dz[2 * d + k] = dh_out[k] * tm * o * (1.0 - o);
        dz[d + k] = dm * cache.m_in[k] * f * (1.0 - f);
        dz[k] = dm * c * u * (1.0 - u);
        dz[3 * d + k] = dm * u * (1.0 - c * c);
        dm_in[k] = dm * f;
    }
    outer_acc(w.of_mut(g), &dz, hcat);
    for (gb, v) in b.of_mut(g).iter_mut().zip(&dz) {
        *gb += v;
    }
    transpose_acc(w.of(p), &dz, dhcat);
    dm_in
}

/// Backward of a cell given gradients w.r.t. its outputs; returns gradients w.r.t. its inputs.
pub(crate) fn cell_backward(
    p: &[f64],
    g: &mut [f64],
    cell: &CellLayout,
    cache: &CellCache,
    d_out: &CellState,
) -> CellState {
    let d = d_out.h_time.len();
    let mut dhcat = vec![0.0; 2 * d];
    let dm_time = stream_backward(
        p,
        g,
        cell.time_w,
        cell.time_b,
        &cache.hcat,
        &cache.time,
        &d_out.h_time,
        &d_out.m_time,
        &mut dhcat,
    );
    let dm_depth = stream_backward(
        p,
        g,
        cell.depth_w,
        cell.depth_b,
        &cache.hcat,
        &cache.depth,
        &d_out.h_depth,
        &d_out.m_depth,
        &mut dhcat,
    );
    let h_depth = dhcat.split_off(d);
    CellState {
        h_time: dhcat,
        m_time: dm_time,
        h_depth,
        m_depth: dm_depth,
    }
}

/// Applies encoder grid cell `layer` of `model` to one input state.
pub fn grid_cell_step(
    model: &GridLstmModel,
    layer: usize,
    input: &CellState,
) -> Result<CellState, TemporalError> {
    let cell = check_cell_input(model, layer, input)?;
    Ok(cell_forward(model.params(), cell, input).0)
}

/// Gradients of `Σ d_out ⊙ outputs` with respect to the cell inputs and to every model
/// parameter (only the chosen cell's blocks are nonzero).
pub fn grid_cell_backward(
    model: &GridLstmModel,
    layer: usize,
    input: &CellState,
    d_out: &CellState,
) -> Result<(CellState, Vec<f64>), TemporalError> {
    let cell = check_cell_input(model, layer, input)?;
    check_state(model.hidden(), d_out)?;
    let (_, cache) = cell_forward(model.params(), cell, input);
    let mut g = vec![0.0; model.param_count()];
    let d_in = cell_backward(model.params(), &mut g, cell, &cache, d_out);
    Ok((d_in, g))
}

fn check_state(d: usize, s: &CellState) -> Result<(), TemporalError> {
    let lens = [
        s.h_time.len(),
        s.m_time.len(),
        s.h_depth.len(),
        s.m_depth.len(),
    ];
    if lens.iter().any(|&l| l != d) {
        return Err(TemporalError::Shape(format!(
            "cell state vectors must have length {d}, got {lens:?}"
        )));
    }
    Ok(())
}

fn check_cell_input<'m>(
    model: &'m GridLstmModel,
    layer: usize,
    input: &CellState,
) -> Result<&'m CellLayout, TemporalError> {
    check_state(model.hidden(), input)?;
    model
        .layout()
        .enc_cells
        .get(layer)
        .ok_or_else(|| TemporalError::Shape(format!("no grid layer {layer}")))
}
