//! Forward and backward passes of the attentional Grid LSTM.
//!
//! Encoder: at step `i` the feature-attention scorer reads `[x_i; h_time(i-1)]`, the weighted
//! input `α_i ⊙ x_i` is projected onto the bottom depth stream and pushed through `L` stacked
//! grid cells (time memory flows horizontally, depth memory vertically).
//! Cross-attention: queries from the encoder time stream, keys and values from the encoder
//! depth stream. Decoder: the context sequence runs through a second grid stack and the final
//! top-layer time state feeds an affine head.

use super::cell::{cell_backward, cell_forward, CellCache, CellState};
use super::model::{CellLayout, GridLstmModel, Seg};
use super::ops::{add_assign, affine, dot, outer_acc, softmax, softmax_backward, transpose_acc};
use super::{AttentionWeights, SeriesWindow, TemporalError};
use crate::numerics::Matrix;

struct Stack<'a> {
    p: &'a [f64],
    cells: &'a [CellLayout],
    in_w: Seg,
    in_b: Seg,
    d: usize,
}

/// Per-layer time-stream state carried between steps.
#[derive(Clone)]
struct TimeState {
    h: Vec<f64>,
    m: Vec<f64>,
}

struct StepRecord {
    input: Vec<f64>,
    cells: Vec<CellCache>,
}

impl<'a> Stack<'a> {
    fn initial_state(&self) -> Vec<TimeState> {
        vec![
            TimeState {
                h: vec![0.0; self.d],
                m: vec![0.0; self.d],
            };
            self.cells.len()
        ]
    }

    /// Runs one column of the grid; returns (record, top time hidden, top depth hidden).
    fn step(&self, u: &[f64], state: &mut [TimeState]) -> (StepRecord, Vec<f64>, Vec<f64>) {
        let mut proj = vec![0.0; self.d];
        affine(
            self.in_w.of(self.p),
            Some(self.in_b.of(self.p)),
            u,
            &mut proj,
        );
        let mut depth_h = proj;
        let mut depth_m = vec![0.0; self.d];
        let mut caches = Vec::with_capacity(self.cells.len());
        for (cell, st) in self.cells.iter().zip(state.iter_mut()) {
            let input = CellState {
                h_time: std::mem::take(&mut st.h),
                m_time: std::mem::take(&mut st.m),
                h_depth: depth_h,
                m_depth: depth_m,
            };
            let (out, cache) = cell_forward(self.p, cell, &input);
            caches.push(cache);
            st.h = out.h_time;
            st.m = out.m_time;
            depth_h = out.h_depth;
            depth_m = out.m_depth;
        }
        let top = state.last().expect("at least one layer").h.clone();
        (
            StepRecord {
                input: u.to_vec(),
                cells: caches,
            },
            top,
            depth_h,
        )
    }

    /// Backpropagation through time over a recorded sequence.
    ///
    /// `d_time_top[i]` / `d_depth_top[i]` are the external gradients on the top-layer outputs.
    /// `on_input` receives `(i, dL/du_i)` and may return an extra gradient for the top time
    /// output of step `i - 1`.
    fn backward(
        &self,
        g: &mut [f64],
        records: &[StepRecord],
        d_time_top: &[Vec<f64>],
        d_depth_top: &[Vec<f64>],
        mut on_input: impl FnMut(usize, &[f64], &mut [f64]) -> Option<Vec<f64>>,
    ) {
        let d = self.d;
        let layers = self.cells.len();
        let mut carry: Vec<TimeState> = self.initial_state();
        let mut extra: Option<Vec<f64>> = None;
        for i in (0..records.len()).rev() {
            let mut below: Option<(Vec<f64>, Vec<f64>)> = None;
            for l in (0..layers).rev() {
                let top = l == layers - 1;
                let mut dh_time = std::mem::take(&mut carry[l].h);
                if top {
                    add_assign(&mut dh_time, &d_time_top[i]);
                    if let Some(e) = extra.take() {
                        add_assign(&mut dh_time, &e);
                    }
                }
                let (dh_depth, dm_depth) = match below.take() {
                    Some(v) => v,
                    None => (d_depth_top[i].clone(), vec![0.0; d]),
                };
                let d_out = CellState {
                    h_time: dh_time,
                    m_time: std::mem::take(&mut carry[l].m),
                    h_depth: dh_depth,
                    m_depth: dm_depth,
                };
                let d_in = cell_backward(self.p, g, &self.cells[l], &records[i].cells[l], &d_out);
                carry[l] = TimeState {
                    h: d_in.h_time,
                    m: d_in.m_time,
                };
                below = Some((d_in.h_depth, d_in.m_depth));
            }
            let (dproj, _) = below.expect("at least one layer");
            let u = &records[i].input;
            outer_acc(self.in_w.of_mut(g), &dproj, u);
            add_assign(self.in_b.of_mut(g), &dproj);
            let mut du = vec![0.0; u.len()];
            transpose_acc(self.in_w.of(self.p), &dproj, &mut du);
            extra = on_input(i, &du, g);
        }
    }
}

/// Encoder pass over one window.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    pub attention: AttentionWeights,
    /// `x̂ = α ⊙ x`, `T × N`.
    pub weighted: Matrix,
    pub h_time: Vec<Vec<f64>>,
    pub h_depth: Vec<Vec<f64>>,
}

struct EncoderTrace {
    score_inputs: Vec<Vec<f64>>,
    alphas: Vec<Vec<f64>>,
    records: Vec<StepRecord>,
    h_time: Vec<Vec<f64>>,
    h_depth: Vec<Vec<f64>>,
}

struct CrossTrace {
    queries: Vec<Vec<f64>>,
    keys: Vec<Vec<f64>>,
    weights: Vec<Vec<f64>>,
    contexts: Vec<Vec<f64>>,
}

struct DecoderTrace {
    records: Vec<StepRecord>,
    last_time: Vec<f64>,
}

pub(crate) struct ForwardTrace {
    x: Vec<Vec<f64>>,
    enc: EncoderTrace,
    cross: CrossTrace,
    dec: DecoderTrace,
    pub(crate) yhat: f64,
}

fn check_window(model: &GridLstmModel, window: &SeriesWindow) -> Result<(), TemporalError> {
    if window.values.cols() != model.features() {
        return Err(TemporalError::Shape(format!(
            "window has {} features, model expects {}",
            window.values.cols(),
            model.features()
        )));
    }
    if window.values.rows() == 0 {
        return Err(TemporalError::Shape("window has no timesteps".into()));
    }
    Ok(())
}

fn encoder_forward(model: &GridLstmModel, x: &[Vec<f64>]) -> EncoderTrace {
    let p = model.params();
    let lay = model.layout();
    let (n, d) = (model.features(), model.hidden());
    let stack = Stack {
        p,
        cells: &lay.enc_cells,
        in_w: lay.enc_in_w,
        in_b: lay.enc_in_b,
        d,
    };
    let mut state = stack.initial_state();
    let t_len = x.len();
    let mut trace = EncoderTrace {
        score_inputs: Vec::with_capacity(t_len),
        alphas: Vec::with_capacity(t_len),
        records: Vec::with_capacity(t_len),
        h_time: Vec::with_capacity(t_len),
        h_depth: Vec::with_capacity(t_len),
    };
    let zeros = vec![0.0; d];
    for xi in x {
        let h_prev = trace.h_time.last().unwrap_or(&zeros);
        let mut score_in = Vec::with_capacity(n + d);
        score_in.extend_from_slice(xi);
        score_in.extend_from_slice(h_prev);
        let mut logits = vec![0.0; n];
        affine(
            lay.attn_w.of(p),
            Some(lay.attn_b.of(p)),
            &score_in,
            &mut logits,
        );
        let mut alpha = vec![0.0; n];
        softmax(&logits, &mut alpha);
        let weighted: Vec<f64> = alpha.iter().zip(xi).map(|(a, v)| a * v).collect();
        let (rec, top_t, top_d) = stack.step(&weighted, &mut state);
        trace.score_inputs.push(score_in);
        trace.alphas.push(alpha);
        trace.records.push(rec);
        trace.h_time.push(top_t);
        trace.h_depth.push(top_d);
    }
    trace
}

/// Scaled dot-product attention with model projections on queries and keys; values unprojected.
fn cross_forward(model: &GridLstmModel, queries_in: &[Vec<f64>], kv: &[Vec<f64>]) -> CrossTrace {
    let p = model.params();
    let lay = model.layout();
    let d = model.hidden();
    let scale = 1.0 / (d as f64).sqrt();
    let project = |w: Seg, v: &Vec<f64>| {
        let mut out = vec![0.0; d];
        affine(w.of(p), None, v, &mut out);
        out
    };
    let queries: Vec<Vec<f64>> = queries_in.iter().map(|q| project(lay.query_w, q)).collect();
    let keys: Vec<Vec<f64>> = kv.iter().map(|k| project(lay.key_w, k)).collect();
    let mut weights = Vec::with_capacity(queries.len());
    let mut contexts = Vec::with_capacity(queries.len());
    for q in &queries {
        let scores: Vec<f64> = keys.iter().map(|k| dot(q, k) * scale).collect();
        let mut w = vec![0.0; keys.len()];
        softmax(&scores, &mut w);
        let mut ctx = vec![0.0; d];
        for (wj, vj) in w.iter().zip(kv) {
            for (c, v) in ctx.iter_mut().zip(vj) {
                *c += wj * v;
            }
        }
        weights.push(w);
        contexts.push(ctx);
    }
    CrossTrace {
        queries,
        keys,
        weights,
        contexts,
    }
}

fn decoder_forward(model: &GridLstmModel, contexts: &[Vec<f64>]) -> (DecoderTrace, f64) {
    let p = model.params();
    let lay = model.layout();
    let stack = Stack {
        p,
        cells: &lay.dec_cells,
        in_w: lay.dec_in_w,
        in_b: lay.dec_in_b,
        d: model.hidden(),
    };
    let mut state = stack.initial_state();
    let mut records = Vec::with_capacity(contexts.len());
    let mut last_time = vec![0.0; model.hidden()];
    for c in contexts {
        let (rec, top_t, _) = stack.step(c, &mut state);
        records.push(rec);
        last_time = top_t;
    }
    let yhat = dot(lay.head_w.of(p), &last_time) + lay.head_b.of(p)[0];
    (DecoderTrace { records, last_time }, yhat)
}

fn window_rows(window: &SeriesWindow) -> Vec<Vec<f64>> {
    window.values.to_rows()
}

pub(crate) fn forward_trace(
    model: &GridLstmModel,
    window: &SeriesWindow,
) -> Result<ForwardTrace, TemporalError> {
    check_window(model, window)?;
    let x = window_rows(window);
    let enc = encoder_forward(model, &x);
    let cross = cross_forward(model, &enc.h_time, &enc.h_depth);
    let (dec, yhat) = decoder_forward(model, &cross.contexts);
    Ok(ForwardTrace {
        x,
        enc,
        cross,
        dec,
        yhat,
    })
}

/// Accumulates `dL/dθ` into `g` given `dL/dŷ`.
pub(crate) fn backward(model: &GridLstmModel, trace: &ForwardTrace, dy: f64, g: &mut [f64]) {
    let p = model.params();
    let lay = model.layout();
    let (n, d) = (model.features(), model.hidden());
    let t_len = trace.x.len();

    // head
    outer_acc(lay.head_w.of_mut(g), &[dy], &trace.dec.last_time);
    lay.head_b.of_mut(g)[0] += dy;
    let mut d_dec_time = vec![vec![0.0; d]; t_len];
    d_dec_time[t_len - 1] = lay.head_w.of(p).iter().map(|w| w * dy).collect();
    let no_depth = vec![vec![0.0; d]; t_len];

    // decoder
    let dec_stack = Stack {
        p,
        cells: &lay.dec_cells,
        in_w: lay.dec_in_w,
        in_b: lay.dec_in_b,
        d,
    };
    let mut d_ctx = vec![Vec::new(); t_len];
    dec_stack.backward(g, &trace.dec.records, &d_dec_time, &no_depth, |i, du, _| {
        d_ctx[i] = du.to_vec();
        None
    });

    // cross-attention
    let scale = 1.0 / (d as f64).sqrt();
    let cross = &trace.cross;
    let kv = &trace.enc.h_depth;
    let q_in = &trace.enc.h_time;
    let mut d_enc_time = vec![vec![0.0; d]; t_len];
    let mut d_enc_depth = vec![vec![0.0; d]; t_len];
    let mut d_keys = vec![vec![0.0; d]; t_len];
    for i in 0..t_len {
        let w = &cross.weights[i];
        let dw: Vec<f64> = kv.iter().map(|v| dot(&d_ctx[i], v)).collect();
        for (j, &wij) in w.iter().enumerate() {
            for (a, b) in d_enc_depth[j].iter_mut().zip(&d_ctx[i]) {
                *a += wij * b;
            }
        }
        let mut ds = vec![0.0; w.len()];
        softmax_backward(w, &dw, &mut ds);
        let mut dq = vec![0.0; d];
        for (j, &dsij) in ds.iter().enumerate() {
            let s = dsij * scale;
            for k in 0..d {
                dq[k] += s * cross.keys[j][k];
                d_keys[j][k] += s * cross.queries[i][k];
            }
        }
        outer_acc(lay.query_w.of_mut(g), &dq, &q_in[i]);
        transpose_acc(lay.query_w.of(p), &dq, &mut d_enc_time[i]);
    }
    for j in 0..t_len {
        outer_acc(lay.key_w.of_mut(g), &d_keys[j], &kv[j]);
        transpose_acc(lay.key_w.of(p), &d_keys[j], &mut d_enc_depth[j]);
    }

    // encoder, with the feature-attention scorer feeding back into the previous time state
    let enc_stack = Stack {
        p,
        cells: &lay.enc_cells,
        in_w: lay.enc_in_w,
        in_b: lay.enc_in_b,
        d,
    };
    let enc = &trace.enc;
    let x = &trace.x;
    enc_stack.backward(g, &enc.records, &d_enc_time, &d_enc_depth, |i, dxhat, g| {
        let alpha = &enc.alphas[i];
        let dalpha: Vec<f64> = dxhat.iter().zip(&x[i]).map(|(a, b)| a * b).collect();
        let mut dlogits = vec![0.0; n];
        softmax_backward(alpha, &dalpha, &mut dlogits);
        outer_acc(lay.attn_w.of_mut(g), &dlogits, &enc.score_inputs[i]);
        add_assign(lay.attn_b.of_mut(g), &dlogits);
        if i == 0 {
            return None;
        }
        let mut dscore = vec![0.0; n + d];
        transpose_acc(lay.attn_w.of(p), &dlogits, &mut dscore);
        Some(dscore.split_off(n))
    });
}

/// Feature attention weights and the reweighted window. The scorer reads the previous encoder
/// time state, so this runs the encoder.
pub fn feature_attention(
    window: &SeriesWindow,
    model: &GridLstmModel,
) -> Result<(AttentionWeights, Matrix), TemporalError> {
    let out = encode(window, model)?;
    Ok((out.attention, out.weighted))
}

pub fn encode(
    window: &SeriesWindow,
    model: &GridLstmModel,
) -> Result<EncoderOutput, TemporalError> {
    check_window(model, window)?;
    let x = window_rows(window);
    let tr = encoder_forward(model, &x);
    let t_len = x.len();
    let n = model.features();
    let alpha = Matrix::from_rows(&tr.alphas).map_err(|e| TemporalError::Shape(e.to_string()))?;
    let weighted = Matrix::from_fn(t_len, n, |i, j| tr.alphas[i][j] * x[i][j]);
    Ok(EncoderOutput {
        attention: AttentionWeights { alpha },
        weighted,
        h_time: tr.h_time,
        h_depth: tr.h_depth,
    })
}

/// Cross-attention output: one context per query plus the attention matrix (`queries × keys`).
#[derive(Debug, Clone, PartialEq)]
pub struct CrossAttention {
    pub contexts: Vec<Vec<f64>>,
    pub weights: Matrix,
}

pub fn cross_attention(
    queries: &[Vec<f64>],
    keys_values: &[Vec<f64>],
    model: &GridLstmModel,
) -> Result<CrossAttention, TemporalError> {
    if keys_values.is_empty() {
        return Err(TemporalError::Shape(
            "cross-attention needs at least one key".into(),
        ));
    }
    if queries.is_empty() {
        return Err(TemporalError::Shape(
            "cross-attention needs at least one query".into(),
        ));
    }
    let d = model.hidden();
    if queries.iter().chain(keys_values).any(|v| v.len() != d) {
        return Err(TemporalError::Shape(format!(
            "state vectors must have length {d}"
        )));
    }
    let tr = cross_forward(model, queries, keys_values);
    let weights =
        Matrix::from_rows(&tr.weights).map_err(|e| TemporalError::Shape(e.to_string()))?;
    Ok(CrossAttention {
        contexts: tr.contexts,
        weights,
    })
}

pub fn decode(contexts: &[Vec<f64>], model: &GridLstmModel) -> Result<f64, TemporalError> {
    let d = model.hidden();
    if contexts.is_empty() || contexts.iter().any(|c| c.len() != d) {
        return Err(TemporalError::Shape(format!(
            "decoder needs a nonempty sequence of length-{d} contexts"
        )));
    }
    Ok(decoder_forward(model, contexts).1)
}

/// Normalized-scale prediction for one window.
pub fn forward(model: &GridLstmModel, window: &SeriesWindow) -> Result<f64, TemporalError> {
    Ok(forward_trace(model, window)?.yhat)
}

/// Squared error `(ŷ − y)²` and its gradient with respect to every parameter.
pub fn loss_and_gradient(
    model: &GridLstmModel,
    window: &SeriesWindow,
) -> Result<(f64, Vec<f64>), TemporalError> {
    let trace = forward_trace(model, window)?;
    let err = trace.yhat - window.target;
    let mut g = vec![0.0; model.param_count()];
    backward(model, &trace, 2.0 * err, &mut g);
    Ok((err * err, g))
}
