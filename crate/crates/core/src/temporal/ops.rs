//! Small dense kernels over slices used by the forward and backward passes.

/// `out = W·x (+ b)` with `W` row-major `out.len() × x.len()`.
#[inline]
pub(crate) fn affine(w: &[f64], b: Option<&[f64]>, x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    debug_assert_eq!(w.len(), out.len() * cols);
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        let mut acc = b.map_or(0.0, |b| b[r]);
        for (a, v) in row.iter().zip(x) {
            acc += a * v;
        }
        *o = acc;
    }
}

/// Accumulates `gW += dy·xᵀ`.
#[inline]
pub(crate) fn outer_acc(gw: &mut [f64], dy: &[f64], x: &[f64]) {
    let cols = x.len();
    for (r, &g) in dy.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        let row = &mut gw[r * cols..(r + 1) * cols];
        for (a, v) in row.iter_mut().zip(x) {
            *a += g * v;
        }
    }
}

/// Accumulates `dx += Wᵀ·dy`.
#[inline]
pub(crate) fn transpose_acc(w: &[f64], dy: &[f64], dx: &mut [f64]) {
    let cols = dx.len();
    for (r, &g) in dy.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        let row = &w[r * cols..(r + 1) * cols];
        for (d, a) in dx.iter_mut().zip(row) {
            *d += g * a;
        }
    }
}

#[inline]
pub(crate) fn add_assign(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Numerically stable softmax of `logits` into `out`.
pub(crate) fn softmax(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        sum += *o;
    }
    let inv = 1.0 / sum;
    out.iter_mut().for_each(|o| *o *= inv);
}

/// Backward of softmax: `dlogit_j = p_j (dp_j − Σ_k p_k dp_k)`.
pub(crate) fn softmax_backward(p: &[f64], dp: &[f64], dlogits: &mut [f64]) {
    let s = dot(p, dp);
    for ((d, &pj), &gj) in dlogits.iter_mut().zip(p).zip(dp) {
        *d = pj * (gj - s);
    }
}
