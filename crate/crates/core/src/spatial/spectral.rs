//! Normalized-Laplacian spectral clustering and cluster-count selection.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{SimilarityMatrix, SpatialError};
use crate::numerics::{clustering_metrics, ClusterReport, Matrix};

pub const KMEANS_RESTARTS: usize = 10;
const KMEANS_MAX_ITER: usize = 300;

fn symmetrized(sim: &SimilarityMatrix) -> Result<Matrix, SpatialError> {
    let s = &sim.values;
    let n = s.rows();
    if n == 0 || s.cols() != n {
        return Err(SpatialError::Invalid(
            "similarity must be square and nonempty".into(),
        ));
    }
    let sym = Matrix::from_fn(n, n, |i, j| 0.5 * (s[(i, j)] + s[(j, i)]));
    if sym.as_slice().iter().any(|&v| v < 0.0) {
        return Err(SpatialError::Invalid(
            "spectral clustering needs a nonnegative similarity".into(),
        ));
    }
    Ok(sym)
}

/// Eigenpairs of `L = I − D^{-1/2} S D^{-1/2}`, eigenvalues ascending.
fn laplacian_eigen(
    sim: &SimilarityMatrix,
) -> Result<(Vec<f64>, DMatrix<f64>, Vec<usize>), SpatialError> {
    let s = symmetrized(sim)?;
    let n = s.rows();
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| {
            let d: f64 = s.row(i).iter().sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let lap = DMatrix::from_fn(n, n, |i, j| {
        let a = inv_sqrt[i] * s[(i, j)] * inv_sqrt[j];
        if i == j {
            1.0 - a
        } else {
            -a
        }
    });
    let eig = SymmetricEigen::new(lap);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .total_cmp(&eig.eigenvalues[b])
            .then(a.cmp(&b))
    });
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    Ok((values, eig.eigenvectors, order))
}

/// Normalized-Laplacian eigenvalues in ascending order.
pub fn laplacian_spectrum(sim: &SimilarityMatrix) -> Result<Vec<f64>, SpatialError> {
    Ok(laplacian_eigen(sim)?.0)
}

/// Rows of the `k` eigenvectors of `L = I − D^{-1/2} S D^{-1/2}` with the smallest
/// eigenvalues, each row scaled to unit length. Isolated nodes (zero degree) embed at 0.
///
/// Eigenvector signs are fixed so that the entry of largest magnitude is positive.
pub fn spectral_embedding(sim: &SimilarityMatrix, k: usize) -> Result<Matrix, SpatialError> {
    let n = sim.len();
    if k == 0 || k > n {
        return Err(SpatialError::Invalid(format!(
            "k = {k} must lie in 1..={n}"
        )));
    }
    let (_, vectors, order) = laplacian_eigen(sim)?;
    let mut emb = Matrix::zeros(n, k);
    for (c, &idx) in order.iter().take(k).enumerate() {
        let v = vectors.column(idx);
        let pivot = (0..n)
            .max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()).then(b.cmp(&a)))
            .expect("nonempty");
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            emb[(i, c)] = sign * v[i];
        }
    }
    for i in 0..n {
        let norm = emb.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            emb.row_mut(i).iter_mut().for_each(|v| *v /= norm);
        }
    }
    Ok(emb)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Relabels so clusters are numbered in order of first appearance.
pub fn canonical_labels(labels: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|&l| {
            let next = map.len();
            *map.entry(l).or_insert(next)
        })
        .collect()
}

/// k-means++ seeding followed by Lloyd iterations; returns `(labels, inertia)`.
fn kmeans_once(points: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, f64) {
    let n = points.rows();
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(points.row(rng.random_range(0..n)).to_vec());
    let mut d2: Vec<f64> = (0..n)
        .map(|i| sq_dist(points.row(i), &centers[0]))
        .collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if r < w {
                    chosen = i;
                    break;
                }
                r -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.push(points.row(pick).to_vec());
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(i), centers.last().expect("pushed")));
        }
    }
    let dim = points.cols();
    let mut labels = vec![usize::MAX; n];
    for _ in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        for i in 0..n {
            let best = (0..k)
                .min_by(|&a, &b| {
                    sq_dist(points.row(i), &centers[a])
                        .total_cmp(&sq_dist(points.row(i), &centers[b]))
                        .then(a.cmp(&b))
                })
                .expect("k >= 1");
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[labels[i]] += 1;
            for (s, v) in sums[labels[i]].iter_mut().zip(points.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            } else {
                // re-seed an empty cluster at the point farthest from its centre
                let far = (0..n)
                    .max_by(|&a, &b| {
                        sq_dist(points.row(a), &centers[labels[a]])
                            .total_cmp(&sq_dist(points.row(b), &centers[labels[b]]))
                            .then(b.cmp(&a))
                    })
                    .expect("n >= 1");
                centers[c] = points.row(far).to_vec();
                labels[far] = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let inertia = (0..n)
        .map(|i| sq_dist(points.row(i), &centers[labels[i]]))
        .sum();
    (labels, inertia)
}

/// Best-of-[`KMEANS_RESTARTS`] k-means on `points`; labels in first-appearance order.
pub fn kmeans(points: &Matrix, k: usize, seed: u64) -> Result<Vec<usize>, SpatialError> {
    let n = points.rows();
    if k == 0 || k > n {
        return Err(SpatialError::Invalid(format!(
            "k = {k} must lie in 1..={n}"
        )));
    }
    if k == n {
        return Ok((0..n).collect());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Vec<usize>, f64)> = None;
    for _ in 0..KMEANS_RESTARTS {
        let (labels, inertia) = kmeans_once(points, k, &mut rng);
        if best.as_ref().is_none_or(|(_, b)| inertia < *b) {
            best = Some((labels, inertia));
        }
    }
    Ok(canonical_labels(&best.expect("at least one restart").0))
}

pub fn spectral_cluster(
    sim: &SimilarityMatrix,
    k: usize,
    seed: u64,
) -> Result<Vec<usize>, SpatialError> {
    let n = sim.len();
    if k < 2 || k > n {
        return Err(SpatialError::Invalid(format!(
            "k = {k} must lie in 2..={n}"
        )));
    }
    let emb = spectral_embedding(sim, k)?;
    kmeans(&emb, k, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterCountRow {
    pub k: usize,
    pub report: ClusterReport,
    pub labels: Vec<usize>,
    /// `λ_{k+1} − λ_k` of the normalized Laplacian; at zero the `k`-column embedding is not
    /// unique and the row is not eligible for recommendation.
    pub eigengap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterCountTable {
    pub rows: Vec<ClusterCountRow>,
    pub recommended: usize,
}

/// Relative slack on the best Davies-Bouldin score when recommending a cluster count.
pub const DB_SLACK: f64 = 0.05;

/// Eigengaps at or below this make a cluster count ineligible for recommendation.
pub const EIGENGAP_TOL: f64 = 1e-9;

/// Clusters for every `k` in `ks` and scores each on its own `k`-column embedding. The
/// recommended `k` has the largest CH among those whose DB is within [`DB_SLACK`] of the best.
/// Counts whose embedding is not unique (eigengap within [`EIGENGAP_TOL`]) are reported but
/// only considered when every count is degenerate.
pub fn evaluate_cluster_counts(
    sim: &SimilarityMatrix,
    ks: std::ops::RangeInclusive<usize>,
    seed: u64,
) -> Result<ClusterCountTable, SpatialError> {
    let n = sim.len();
    let (lo, hi) = (*ks.start(), (*ks.end()).min(n.saturating_sub(1)));
    if lo < 2 || hi < lo {
        return Err(SpatialError::Invalid(format!(
            "cluster counts {ks:?} leave nothing to evaluate for {n} nodes"
        )));
    }
    let spectrum = laplacian_spectrum(sim)?;
    let mut rows = Vec::new();
    for k in lo..=hi {
        let emb = spectral_embedding(sim, k)?;
        let labels = kmeans(&emb, k, seed)?;
        let distinct = labels.iter().max().map_or(0, |m| m + 1);
        if distinct < 2 {
            continue;
        }
        let report = clustering_metrics(&emb, &labels).map_err(SpatialError::Numerics)?;
        let eigengap = spectrum[k] - spectrum[k - 1];
        rows.push(ClusterCountRow {
            k,
            report,
            labels,
            eigengap,
        });
    }
    let mut eligible: Vec<&ClusterCountRow> =
        rows.iter().filter(|r| r.eigengap > EIGENGAP_TOL).collect();
    if eligible.is_empty() {
        eligible = rows.iter().collect();
    }
    let best_db = eligible
        .iter()
        .map(|r| r.report.db)
        .fold(f64::INFINITY, f64::min);
    let recommended = eligible
        .iter()
        .filter(|r| r.report.db <= best_db * (1.0 + DB_SLACK) + 1e-12)
        .max_by(|a, b| a.report.ch.total_cmp(&b.report.ch).then(b.k.cmp(&a.k)))
        .map(|r| r.k)
        .ok_or_else(|| SpatialError::Invalid("no cluster count produced two clusters".into()))?;
    Ok(ClusterCountTable { rows, recommended })
}
