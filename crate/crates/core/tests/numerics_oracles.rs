//! Independent oracles for the numerics module: an extended-precision Taylor series for the
//! matrix exponential and a brute-force silhouette.

use cityagent_core::numerics::{
    clustering_metrics, denormalize, mat_exp, min_max_normalize, regression_metrics, Matrix,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Double-double number (hi + lo), roughly 106 bits of mantissa.
#[derive(Clone, Copy, Debug)]
struct Dd {
    hi: f64,
    lo: f64,
}

impl Dd {
    fn new(x: f64) -> Self {
        Dd { hi: x, lo: 0.0 }
    }

    fn two_sum(a: f64, b: f64) -> (f64, f64) {
        let s = a + b;
        let bb = s - a;
        (s, (a - (s - bb)) + (b - bb))
    }

    fn add(self, o: Dd) -> Dd {
        let (s, e) = Self::two_sum(self.hi, o.hi);
        let e = e + self.lo + o.lo;
        let (hi, lo) = Self::two_sum(s, e);
        Dd { hi, lo }
    }

    fn mul(self, o: Dd) -> Dd {
        let p = self.hi * o.hi;
        let e = self.hi.mul_add(o.hi, -p);
        let e = e + self.hi * o.lo + self.lo * o.hi;
        let (hi, lo) = Self::two_sum(p, e);
        Dd { hi, lo }
    }

    fn div_f64(self, d: f64) -> Dd {
        let q1 = self.hi / d;
        let r = self.add(Dd::new(-q1).mul(Dd::new(d)));
        let q2 = r.hi / d;
        let (hi, lo) = Self::two_sum(q1, q2);
        Dd { hi, lo }
    }
}

fn dd_matmul(a: &[Dd], b: &[Dd], n: usize) -> Vec<Dd> {
    let mut out = vec![Dd::new(0.0); n * n];
    for i in 0..n {
        for j in 0..n {
            let mut acc = Dd::new(0.0);
            for k in 0..n {
                acc = acc.add(a[i * n + k].mul(b[k * n + j]));
            }
            out[i * n + j] = acc;
        }
    }
    out
}

/// Unscaled 200-term Taylor series evaluated in double-double arithmetic.
fn taylor_oracle(m: &Matrix) -> Matrix {
    let n = m.rows();
    let a: Vec<Dd> = m.as_slice().iter().map(|&v| Dd::new(v)).collect();
    let mut term: Vec<Dd> = (0..n * n)
        .map(|i| Dd::new(if i / n == i % n { 1.0 } else { 0.0 }))
        .collect();
    let mut sum = term.clone();
    for k in 1..200 {
        term = dd_matmul(&term, &a, n)
            .into_iter()
            .map(|v| v.div_f64(k as f64))
            .collect();
        for (s, t) in sum.iter_mut().zip(&term) {
            *s = s.add(*t);
        }
    }
    Matrix::from_vec(n, n, sum.iter().map(|v| v.hi + v.lo).collect()).unwrap()
}

fn random_matrix(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Matrix {
    Matrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0) * scale)
}

#[test]
fn mat_exp_matches_extended_precision_taylor() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for _ in 0..20 {
        let m = random_matrix(&mut rng, 4, 1.0);
        let got = mat_exp(&m).unwrap();
        let want = taylor_oracle(&m);
        let err = got.sub(&want).norm_inf();
        assert!(err < 1e-10, "‖e^M − oracle‖∞ = {err:e}");
    }
}

#[test]
fn mat_exp_inverse_property() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for n in [1, 2, 3, 5, 8] {
        let mut m = random_matrix(&mut rng, n, 1.0);
        let norm = m.norm_inf().max(1e-12);
        m = m.scale(rng.random_range(0.1..2.0) / norm);
        let prod = mat_exp(&m)
            .unwrap()
            .matmul(&mat_exp(&m.scale(-1.0)).unwrap());
        assert!(prod.max_abs_diff(&Matrix::identity(n)) < 1e-8);
    }
}

#[test]
fn mat_exp_permutation_similarity() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let m = random_matrix(&mut rng, 6, 1.5);
    let perm = [3, 0, 5, 1, 4, 2];
    let lhs = mat_exp(&m).unwrap().permute_symmetric(&perm);
    let rhs = mat_exp(&m.permute_symmetric(&perm)).unwrap();
    assert!(lhs.max_abs_diff(&rhs) < 1e-12);
}

/// Silhouette computed directly from its definition, one point at a time.
fn brute_silhouette(points: &[Vec<f64>], labels: &[usize]) -> f64 {
    let d = |a: &Vec<f64>, b: &Vec<f64>| -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };
    let mut total = 0.0;
    for i in 0..points.len() {
        let same: Vec<usize> = (0..points.len())
            .filter(|&j| j != i && labels[j] == labels[i])
            .collect();
        if same.is_empty() {
            continue;
        }
        let a = same.iter().map(|&j| d(&points[i], &points[j])).sum::<f64>() / same.len() as f64;
        let mut others: Vec<usize> = labels.iter().copied().filter(|&l| l != labels[i]).collect();
        others.sort_unstable();
        others.dedup();
        let b = others
            .iter()
            .map(|&l| {
                let mem: Vec<usize> = (0..points.len()).filter(|&j| labels[j] == l).collect();
                mem.iter().map(|&j| d(&points[i], &points[j])).sum::<f64>() / mem.len() as f64
            })
            .fold(f64::INFINITY, f64::min);
        total += (b - a) / a.max(b);
    }
    total / points.len() as f64
}

#[test]
fn silhouette_matches_brute_force_on_two_bars() {
    let pts = vec![
        vec![0.0, 0.0],
        vec![0.0, 1.0],
        vec![10.0, 0.0],
        vec![10.0, 1.0],
    ];
    let labels = [0, 0, 1, 1];
    let m = Matrix::from_rows(&pts).unwrap();
    let r = clustering_metrics(&m, &labels).unwrap();
    let want = brute_silhouette(&pts, &labels);
    assert!((r.sc - want).abs() < 1e-9);
    // a = 1, b = (10 + √101)/2 for every point
    let b = (10.0 + 101f64.sqrt()) / 2.0;
    assert!((r.sc - (b - 1.0) / b).abs() < 1e-12);
}

#[test]
fn silhouette_matches_brute_force_on_random_fixtures() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..30 {
        let n = rng.random_range(3..=8);
        let pts: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..3).map(|_| rng.random_range(-5.0..5.0)).collect())
            .collect();
        let k = rng.random_range(2..=n.min(4));
        let mut labels: Vec<usize> = (0..n).map(|i| i % k).collect();
        for i in (1..n).rev() {
            labels.swap(i, rng.random_range(0..=i));
        }
        let m = Matrix::from_rows(&pts).unwrap();
        let r = clustering_metrics(&m, &labels).unwrap();
        assert!((r.sc - brute_silhouette(&pts, &labels)).abs() < 1e-9);
    }
}

proptest! {
    #[test]
    fn normalize_round_trip(values in proptest::collection::vec(-1e6f64..1e6, 1..100)) {
        let (z, p) = min_max_normalize(&values).unwrap();
        prop_assert!(z.iter().all(|v| (0.0..=1.0).contains(v)));
        let back = denormalize(&z, &p);
        let span = (p.max[0] - p.min[0]).abs().max(1.0);
        for (a, b) in values.iter().zip(&back) {
            prop_assert!((a - b).abs() <= 1e-12 * span);
        }
    }

    #[test]
    fn regression_metrics_permutation_invariant_and_mae_le_rmse(
        pairs in proptest::collection::vec((-100f64..100.0, -100f64..100.0), 1..50),
        rot in 0usize..50,
    ) {
        let y: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let yhat: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let r = regression_metrics(&y, &yhat).unwrap();
        prop_assert!(r.mae <= r.rmse + 1e-12);
        let k = rot % y.len();
        let mut y2 = y.clone();
        let mut yh2 = yhat.clone();
        y2.rotate_left(k);
        yh2.rotate_left(k);
        let r2 = regression_metrics(&y2, &yh2).unwrap();
        prop_assert!((r.rmse - r2.rmse).abs() < 1e-9);
        prop_assert!((r.mae - r2.mae).abs() < 1e-9);
    }
}

#[test]
fn normalize_round_trip_hundred_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let values: Vec<f64> = (0..100).map(|_| rng.random_range(-50.0..50.0)).collect();
    let (z, p) = min_max_normalize(&values).unwrap();
    let back = denormalize(&z, &p);
    let err = values
        .iter()
        .zip(&back)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(err < 1e-12);
}
