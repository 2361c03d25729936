//! Regression, clustering and agreement metrics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Matrix, NumericsError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    pub rmse: f64,
    pub mae: f64,
    /// Mean absolute percentage error over the nonzero targets, as a fraction.
    /// `None` when every target is zero.
    pub mape: Option<f64>,
    /// `None` when the targets are constant.
    pub r2: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    /// Silhouette coefficient.
    pub sc: f64,
    /// Calinski-Harabasz index.
    pub ch: f64,
    /// Davies-Bouldin index.
    pub db: f64,
}

/// Cosine similarity; zero vectors have similarity 0 with everything.
pub fn cosine_sim(u: &[f64], v: &[f64]) -> Result<f64, NumericsError> {
    if u.len() != v.len() {
        return Err(NumericsError::Shape {
            expected: format!("vectors of length {}", u.len()),
            found: format!("length {}", v.len()),
        });
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

pub fn regression_metrics(y: &[f64], yhat: &[f64]) -> Result<RegressionReport, NumericsError> {
    if y.len() != yhat.len() {
        return Err(NumericsError::Shape {
            expected: format!("{} predictions", y.len()),
            found: format!("{} predictions", yhat.len()),
        });
    }
    if y.is_empty() {
        return Err(NumericsError::Empty("regression targets"));
    }
    let n = y.len() as f64;
    let sse: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b).powi(2)).sum();
    let sae: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b).abs()).sum();

    let (ape, nonzero) = y
        .iter()
        .zip(yhat)
        .filter(|(a, _)| **a != 0.0)
        .fold((0.0, 0usize), |(s, c), (a, b)| {
            (s + ((a - b) / a).abs(), c + 1)
        });
    let mape = (nonzero > 0).then(|| ape / nonzero as f64);

    let mean = y.iter().sum::<f64>() / n;
    let sst: f64 = y.iter().map(|a| (a - mean).powi(2)).sum();
    let r2 = (sst > 0.0).then(|| 1.0 - sse / sst);

    Ok(RegressionReport {
        rmse: (sse / n).sqrt(),
        mae: sae / n,
        mape,
        r2,
    })
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Groups point indices by label, ordered by label value.
fn groups(labels: &[usize]) -> Vec<Vec<usize>> {
    let mut map: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        map.entry(l).or_default().push(i);
    }
    map.into_values().collect()
}

fn centroid(points: &Matrix, members: &[usize]) -> Vec<f64> {
    let mut c = vec![0.0; points.cols()];
    for &i in members {
        for (acc, v) in c.iter_mut().zip(points.row(i)) {
            *acc += v;
        }
    }
    let inv = 1.0 / members.len() as f64;
    c.iter_mut().for_each(|v| *v *= inv);
    c
}

/// Silhouette, Calinski-Harabasz and Davies-Bouldin indices for a labelling of `points`
/// (one point per row, Euclidean distance).
pub fn clustering_metrics(
    points: &Matrix,
    labels: &[usize],
) -> Result<ClusterReport, NumericsError> {
    if labels.len() != points.rows() {
        return Err(NumericsError::Shape {
            expected: format!("{} labels", points.rows()),
            found: format!("{} labels", labels.len()),
        });
    }
    let clusters = groups(labels);
    if clusters.len() < 2 {
        return Err(NumericsError::SingleCluster);
    }
    let n = points.rows();
    let k = clusters.len();
    let mut cluster_of = vec![0usize; n];
    for (c, members) in clusters.iter().enumerate() {
        for &i in members {
            cluster_of[i] = c;
        }
    }

    // silhouette
    let mut sil_sum = 0.0;
    for i in 0..n {
        let own = cluster_of[i];
        if clusters[own].len() == 1 {
            continue;
        }
        let mut dist_sum = vec![0.0; k];
        for j in 0..n {
            if j != i {
                dist_sum[cluster_of[j]] += euclidean(points.row(i), points.row(j));
            }
        }
        let a = dist_sum[own] / (clusters[own].len() - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own)
            .map(|c| dist_sum[c] / clusters[c].len() as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            sil_sum += (b - a) / denom;
        }
    }
    let sc = sil_sum / n as f64;

    let centroids: Vec<Vec<f64>> = clusters.iter().map(|m| centroid(points, m)).collect();
    let all: Vec<usize> = (0..n).collect();
    let global = centroid(points, &all);

    // Calinski-Harabasz
    let mut between = 0.0;
    let mut within = 0.0;
    for (members, c) in clusters.iter().zip(&centroids) {
        between += members.len() as f64 * euclidean(c, &global).powi(2);
        within += members
            .iter()
            .map(|&i| euclidean(points.row(i), c).powi(2))
            .sum::<f64>();
    }
    let ch = if within == 0.0 {
        1.0
    } else {
        between * (n - k) as f64 / (within * (k - 1) as f64)
    };

    // Davies-Bouldin
    let scatter: Vec<f64> = clusters
        .iter()
        .zip(&centroids)
        .map(|(members, c)| {
            members
                .iter()
                .map(|&i| euclidean(points.row(i), c))
                .sum::<f64>()
                / members.len() as f64
        })
        .collect();
    let mut db_sum = 0.0;
    for i in 0..k {
        let worst = (0..k)
            .filter(|&j| j != i)
            .map(|j| {
                let sep = euclidean(&centroids[i], &centroids[j]);
                if sep == 0.0 {
                    0.0
                } else {
                    (scatter[i] + scatter[j]) / sep
                }
            })
            .fold(0.0, f64::max);
        db_sum += worst;
    }
    let db = db_sum / k as f64;

    Ok(ClusterReport { sc, ch, db })
}

fn comb2(x: u64) -> f64 {
    (x * x.saturating_sub(1)) as f64 / 2.0
}

/// Adjusted Rand index between two labellings of the same points.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64, NumericsError> {
    if a.len() != b.len() {
        return Err(NumericsError::Shape {
            expected: format!("{} labels", a.len()),
            found: format!("{} labels", b.len()),
        });
    }
    if a.is_empty() {
        return Err(NumericsError::Empty("labellings"));
    }
    let mut table: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    let mut rows: BTreeMap<usize, u64> = BTreeMap::new();
    let mut cols: BTreeMap<usize, u64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&c| comb2(c)).sum();
    let sum_rows: f64 = rows.values().map(|&c| comb2(c)).sum();
    let sum_cols: f64 = cols.values().map(|&c| comb2(c)).sum();
    let total = comb2(a.len() as u64);
    let expected = sum_rows * sum_cols / total.max(1.0);
    let max_index = 0.5 * (sum_rows + sum_cols);
    if max_index == expected {
        // both labellings trivial (all singletons or one block): identical structure
        return Ok(1.0);
    }
    Ok((index - expected) / (max_index - expected))
}
