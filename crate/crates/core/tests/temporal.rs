use cityagent_core::data::{synth_series, SeriesSpec, TimeSeriesDataset};
use cityagent_core::numerics::{regression_metrics, Matrix};
use cityagent_core::temporal::{
    cross_attention, decode, encode, feature_attention, forward, grid_cell_backward,
    grid_cell_step, loss_and_gradient, make_windows, predict, predict_batch, train,
    train_on_windows, CellState, Checkpoint, GridLstmModel, ModelConfig, SeriesWindow,
    TemporalError, TrainConfig,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;
/// Absolute floor of the relative-error denominator, for components that are ~0.
const FLOOR: f64 = 1e-6;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

fn random_state(rng: &mut ChaCha8Rng, d: usize) -> CellState {
    CellState {
        h_time: random_vec(rng, d, 1.0),
        m_time: random_vec(rng, d, 1.0),
        h_depth: random_vec(rng, d, 1.0),
        m_depth: random_vec(rng, d, 1.0),
    }
}

fn random_window(rng: &mut ChaCha8Rng, t: usize, n: usize) -> SeriesWindow {
    let values = Matrix::from_fn(t, n, |_, _| rng.random_range(0.0..1.0));
    SeriesWindow::new(values, rng.random_range(0.0..1.0)).unwrap()
}

fn flat(s: &CellState) -> Vec<f64> {
    [&s.h_time, &s.m_time, &s.h_depth, &s.m_depth]
        .iter()
        .flat_map(|v| v.iter().copied())
        .collect()
}

fn weighted_sum(s: &CellState, w: &CellState) -> f64 {
    flat(s).iter().zip(flat(w)).map(|(a, b)| a * b).sum()
}

fn instance_model(d: usize, n: usize, seed: u64) -> GridLstmModel {
    GridLstmModel::init(ModelConfig::new(n, d), seed).unwrap()
}

#[test]
fn zero_cell_maps_zero_state_to_zero() {
    let model = GridLstmModel::zeros(ModelConfig::new(2, 5)).unwrap();
    let out = grid_cell_step(&model, 0, &CellState::zeros(5)).unwrap();
    assert_eq!(out, CellState::zeros(5));
    for v in [&out.h_time, &out.m_time, &out.h_depth, &out.m_depth] {
        assert_eq!(v.len(), 5);
    }
}

#[test]
fn cell_rejects_wrong_dimensions() {
    let model = instance_model(4, 2, 1);
    let bad = CellState::zeros(3);
    assert!(matches!(
        grid_cell_step(&model, 0, &bad),
        Err(TemporalError::Shape(_))
    ));
    assert!(grid_cell_step(&model, 7, &CellState::zeros(4)).is_err());
}

#[test]
fn cell_gradient_matches_finite_differences() {
    let d = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut model = instance_model(d, 2, 3);
    let input = random_state(&mut rng, d);
    let d_out = random_state(&mut rng, d);
    let (d_in, grad) = grid_cell_backward(&model, 1, &input, &d_out).unwrap();
    let objective =
        |m: &GridLstmModel, s: &CellState| weighted_sum(&grid_cell_step(m, 1, s).unwrap(), &d_out);

    let mut worst: f64 = 0.0;
    for i in 0..model.param_count() {
        let orig = model.params()[i];
        model.params_mut()[i] = orig + EPS;
        let up = objective(&model, &input);
        model.params_mut()[i] = orig - EPS;
        let down = objective(&model, &input);
        model.params_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * EPS);
        worst = worst.max(rel_err(grad[i], numeric));
    }
    let analytic_in = flat(&d_in);
    let base = flat(&input);
    for k in 0..base.len() {
        let perturb = |delta: f64| {
            let mut v = base.clone();
            v[k] += delta;
            CellState {
                h_time: v[0..d].to_vec(),
                m_time: v[d..2 * d].to_vec(),
                h_depth: v[2 * d..3 * d].to_vec(),
                m_depth: v[3 * d..].to_vec(),
            }
        };
        let numeric =
            (objective(&model, &perturb(EPS)) - objective(&model, &perturb(-EPS))) / (2.0 * EPS);
        worst = worst.max(rel_err(analytic_in[k], numeric));
    }
    assert!(worst < REL_TOL, "worst relative error {worst:e}");
}

#[test]
fn full_model_gradient_matches_finite_differences() {
    let (d, t, n) = (4, 3, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut model = instance_model(d, n, 9);
    let window = random_window(&mut rng, t, n);
    let (_, grad) = loss_and_gradient(&model, &window).unwrap();
    let loss = |m: &GridLstmModel| {
        let e = forward(m, &window).unwrap() - window.target;
        e * e
    };
    let mut worst: f64 = 0.0;
    for i in 0..model.param_count() {
        let orig = model.params()[i];
        model.params_mut()[i] = orig + EPS;
        let up = loss(&model);
        model.params_mut()[i] = orig - EPS;
        let down = loss(&model);
        model.params_mut()[i] = orig;
        worst = worst.max(rel_err(grad[i], (up - down) / (2.0 * EPS)));
    }
    assert!(worst < REL_TOL, "worst relative error {worst:e}");
}

#[test]
fn shared_decoder_gradient_matches_finite_differences() {
    let mut cfg = ModelConfig::new(2, 4);
    cfg.share_decoder_cells = true;
    let mut model = GridLstmModel::init(cfg, 4).unwrap();
    let window = random_window(&mut ChaCha8Rng::seed_from_u64(8), 3, 2);
    let (_, grad) = loss_and_gradient(&model, &window).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..model.param_count() {
        let orig = model.params()[i];
        model.params_mut()[i] = orig + EPS;
        let up = (forward(&model, &window).unwrap() - window.target).powi(2);
        model.params_mut()[i] = orig - EPS;
        let down = (forward(&model, &window).unwrap() - window.target).powi(2);
        model.params_mut()[i] = orig;
        worst = worst.max(rel_err(grad[i], (up - down) / (2.0 * EPS)));
    }
    assert!(worst < REL_TOL, "worst relative error {worst:e}");
    assert!(model.param_count() < instance_model(4, 2, 4).param_count());
}

#[test]
fn zero_attention_scorer_gives_uniform_weights() {
    let mut model = instance_model(4, 3, 2);
    let lay = model.layout().clone();
    for seg in [lay.attn_w, lay.attn_b] {
        seg.of_mut(model.params_mut())
            .iter_mut()
            .for_each(|p| *p = 0.0);
    }
    let window = random_window(&mut ChaCha8Rng::seed_from_u64(1), 6, 3);
    let (alpha, weighted) = feature_attention(&window, &model).unwrap();
    for i in 0..6 {
        for j in 0..3 {
            assert!((alpha.alpha[(i, j)] - 1.0 / 3.0).abs() < 1e-15);
            assert!((weighted[(i, j)] - window.values[(i, j)] / 3.0).abs() < 1e-15);
        }
    }
}

#[test]
fn single_feature_attention_is_identity() {
    let model = instance_model(4, 1, 2);
    let window = random_window(&mut ChaCha8Rng::seed_from_u64(3), 5, 1);
    let (alpha, weighted) = feature_attention(&window, &model).unwrap();
    assert!(alpha.alpha.as_slice().iter().all(|&a| a == 1.0));
    assert_eq!(weighted, window.values);
}

#[test]
fn attention_rejects_feature_mismatch() {
    let model = instance_model(4, 3, 2);
    let window = random_window(&mut ChaCha8Rng::seed_from_u64(3), 5, 2);
    assert!(matches!(
        feature_attention(&window, &model),
        Err(TemporalError::Shape(_))
    ));
    assert!(forward(&model, &window).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn attention_rows_are_distributions(seed in 0u64..10_000, t in 1usize..10, n in 1usize..6) {
        let model = instance_model(4, n, seed);
        let window = random_window(&mut ChaCha8Rng::seed_from_u64(seed ^ 0xabc), t, n);
        let (alpha, _) = feature_attention(&window, &model).unwrap();
        for i in 0..t {
            let row = alpha.alpha.row(i);
            prop_assert!(row.iter().all(|&a| a >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let enc = encode(&window, &model).unwrap();
        let cross = cross_attention(&enc.h_time, &enc.h_depth, &model).unwrap();
        for i in 0..t {
            let row = cross.weights.row(i);
            prop_assert!(row.iter().all(|&a| a >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn encoder_emits_one_state_per_step() {
    let model = instance_model(6, 3, 2);
    let window = random_window(&mut ChaCha8Rng::seed_from_u64(4), 12, 3);
    let enc = encode(&window, &model).unwrap();
    assert_eq!(enc.h_time.len(), 12);
    assert_eq!(enc.h_depth.len(), 12);
    assert!(enc.h_time.iter().chain(&enc.h_depth).all(|h| h.len() == 6));
}

#[test]
fn zero_model_on_zero_input_encodes_zeros() {
    let model = GridLstmModel::zeros(ModelConfig::new(2, 4)).unwrap();
    let window = SeriesWindow::new(Matrix::zeros(7, 2), 0.0).unwrap();
    let enc = encode(&window, &model).unwrap();
    assert!(enc
        .h_time
        .iter()
        .chain(&enc.h_depth)
        .flatten()
        .all(|&v| v == 0.0));
}

#[test]
fn perturbing_a_step_leaves_earlier_states_untouched() {
    let model = instance_model(5, 3, 7);
    let window = random_window(&mut ChaCha8Rng::seed_from_u64(10), 8, 3);
    let base = encode(&window, &model).unwrap();
    for t in 0..8 {
        let mut w = window.clone();
        w.values[(t, 1)] += 0.25;
        let enc = encode(&w, &model).unwrap();
        for s in 0..t {
            assert_eq!(
                enc.h_time[s], base.h_time[s],
                "time state {s} moved for step {t}"
            );
            assert_eq!(
                enc.h_depth[s], base.h_depth[s],
                "depth state {s} moved for step {t}"
            );
        }
        assert_ne!(enc.h_time[t], base.h_time[t]);
    }
}

fn project(model: &GridLstmModel, seg: cityagent_core::temporal::Seg, v: &[f64]) -> Vec<f64> {
    let w = seg.of(model.params());
    (0..seg.rows)
        .map(|r| (0..seg.cols).map(|c| w[r * seg.cols + c] * v[c]).sum())
        .collect()
}

#[test]
fn cross_attention_matches_brute_force_softmax() {
    let d = 4;
    let model = instance_model(d, 2, 12);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let queries: Vec<Vec<f64>> = (0..5).map(|_| random_vec(&mut rng, d, 1.0)).collect();
    let kv: Vec<Vec<f64>> = (0..6).map(|_| random_vec(&mut rng, d, 1.0)).collect();
    let out = cross_attention(&queries, &kv, &model).unwrap();
    let lay = model.layout();
    for (i, q) in queries.iter().enumerate() {
        let qp = project(&model, lay.query_w, q);
        let scores: Vec<f64> = kv
            .iter()
            .map(|k| {
                let kp = project(&model, lay.key_w, k);
                qp.iter().zip(&kp).map(|(a, b)| a * b).sum::<f64>() / (d as f64).sqrt()
            })
            .collect();
        let z: f64 = scores.iter().map(|s| s.exp()).sum();
        let weights: Vec<f64> = scores.iter().map(|s| s.exp() / z).collect();
        for (j, w) in weights.iter().enumerate() {
            assert!((out.weights[(i, j)] - w).abs() < 1e-10);
        }
        for c in 0..d {
            let ctx: f64 = weights.iter().zip(&kv).map(|(w, v)| w * v[c]).sum();
            assert!((out.contexts[i][c] - ctx).abs() < 1e-10);
        }
    }
}

#[test]
fn cross_attention_degenerate_cases() {
    let model = instance_model(3, 2, 1);
    let queries = vec![vec![0.3, -0.1, 0.9], vec![1.0, 1.0, -1.0]];
    let single = vec![vec![0.2, 0.4, -0.6]];
    let out = cross_attention(&queries, &single, &model).unwrap();
    assert!(out.contexts.iter().all(|c| c == &single[0]));
    let same = vec![single[0].clone(); 4];
    let out = cross_attention(&queries, &same, &model).unwrap();
    assert!(out
        .weights
        .as_slice()
        .iter()
        .all(|&w| (w - 0.25).abs() < 1e-15));
    assert!(matches!(
        cross_attention(&queries, &[], &model),
        Err(TemporalError::Shape(_))
    ));
}

#[test]
fn zero_model_predicts_head_bias() {
    let mut model = GridLstmModel::zeros(ModelConfig::new(2, 4)).unwrap();
    let head_b = model.layout().head_b;
    head_b.of_mut(model.params_mut())[0] = 0.37;
    let window = random_window(&mut ChaCha8Rng::seed_from_u64(6), 4, 2);
    assert_eq!(forward(&model, &window).unwrap(), 0.37);
    let contexts = vec![vec![0.5; 4]; 3];
    assert_eq!(decode(&contexts, &model).unwrap(), 0.37);
}

#[test]
fn prediction_is_pure_and_batch_consistent() {
    let model = instance_model(4, 3, 21);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let windows: Vec<SeriesWindow> = (0..6).map(|_| random_window(&mut rng, 5, 3)).collect();
    let batch = predict_batch(&model, &windows).unwrap();
    for (w, b) in windows.iter().zip(&batch) {
        let a = predict(&model, w).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert_eq!(a.to_bits(), predict(&model, w).unwrap().to_bits());
    }
}

fn small_series(length: usize, seed: u64) -> TimeSeriesDataset {
    synth_series(&SeriesSpec {
        length,
        features: 2,
        seed,
        ..SeriesSpec::default()
    })
    .unwrap()
}

fn small_config() -> TrainConfig {
    TrainConfig {
        epochs: 4,
        hidden: 4,
        window: 6,
        batch_size: 32,
        seed: 3,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_learning_rate_keeps_parameters_and_flat_history() {
    let ds = small_series(160, 1);
    let cfg = TrainConfig {
        learning_rate: 0.0,
        ..small_config()
    };
    let out = train(&ds, &cfg).unwrap();
    let init = GridLstmModel::init(cfg.model_config(2), cfg.seed).unwrap();
    assert_eq!(out.forecaster.model.params(), init.params());
    assert_eq!(out.history.len(), cfg.epochs);
    let first = out.history[0];
    for h in &out.history {
        assert_eq!(h.train_loss.to_bits(), first.train_loss.to_bits());
        assert_eq!(h.val_loss.to_bits(), first.val_loss.to_bits());
    }
}

#[test]
fn training_is_bit_deterministic() {
    let ds = small_series(160, 2);
    let a = train(&ds, &small_config()).unwrap();
    let b = train(&ds, &small_config()).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.forecaster, b.forecaster);
    let other = train(
        &ds,
        &TrainConfig {
            seed: 4,
            ..small_config()
        },
    )
    .unwrap();
    assert_ne!(a.history, other.history);
}

#[test]
fn training_reduces_loss_and_keeps_best_model() {
    let ds = small_series(300, 3);
    let cfg = TrainConfig {
        epochs: 15,
        learning_rate: 1e-2,
        ..small_config()
    };
    let out = train(&ds, &cfg).unwrap();
    let h = &out.history;
    assert!(h.last().unwrap().train_loss < h[0].train_loss);
    let best = h.iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min);
    assert_eq!(out.best_val_loss, best);
    assert_eq!(h[out.best_epoch].val_loss, best);
}

#[test]
fn patience_stops_early() {
    let ds = small_series(160, 4);
    let cfg = TrainConfig {
        epochs: 50,
        learning_rate: 0.0,
        patience: Some(3),
        ..small_config()
    };
    let out = train(&ds, &cfg).unwrap();
    assert_eq!(out.history.len(), 4);
}

#[test]
fn too_short_series_is_rejected() {
    let ds = small_series(6, 5);
    assert!(matches!(
        train(&ds, &small_config()),
        Err(TemporalError::InsufficientData(_))
    ));
    assert!(train_on_windows(&[], &[], 2, &small_config()).is_err());
}

#[test]
fn invalid_config_is_rejected() {
    let ds = small_series(100, 5);
    let bad = TrainConfig {
        batch_size: 0,
        ..small_config()
    };
    assert!(matches!(
        train(&ds, &bad),
        Err(TemporalError::InvalidConfig(_))
    ));
}

#[test]
fn windows_skip_invalid_rows_and_split_chronologically() {
    let n = 40;
    let values = Matrix::from_fn(n, 2, |i, j| (i * (j + 1)) as f64);
    let mut valid = vec![true; n];
    valid[10] = false;
    let ds = TimeSeriesDataset::new(
        "w",
        (0..n as i64).collect(),
        vec!["a".into(), "b".into()],
        values,
        Some(valid),
    )
    .unwrap();
    let w = make_windows(&ds, 4, None).unwrap();
    let rows: Vec<usize> = w
        .train_rows
        .iter()
        .chain(&w.val_rows)
        .chain(&w.test_rows)
        .copied()
        .collect();
    // window rows r-4..=r must avoid row 10
    assert!(rows.iter().all(|&r| !(10..=14).contains(&r)));
    assert!(rows.windows(2).all(|p| p[0] < p[1]));
    assert_eq!(rows[0], 4);
    assert!(w.train_rows.iter().all(|&r| r < 28));
    assert!(w.test_rows.iter().all(|&r| r >= 34));
    // targets come from the last column, normalized
    let norm = ds.normalized();
    assert_eq!(w.train[0].target, norm[(4, 1)]);
    assert_eq!(w.train[0].values.row(3), norm.row(3));
}

#[test]
fn checkpoint_round_trip_preserves_forecasts() {
    let ds = small_series(160, 6);
    let cfg = small_config();
    let out = train(&ds, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    Checkpoint::new(&out.forecaster, &cfg).save(&path).unwrap();
    let restored = Checkpoint::load(&path).unwrap().into_forecaster().unwrap();
    assert_eq!(restored, out.forecaster);
    for w in &out.splits.val {
        assert_eq!(
            restored.predict(w).unwrap().to_bits(),
            out.forecaster.predict(w).unwrap().to_bits()
        );
    }
    let mut bad = Checkpoint::new(&out.forecaster, &cfg);
    bad.version = 99;
    assert!(matches!(
        bad.into_forecaster(),
        Err(TemporalError::Checkpoint(_))
    ));
    let mut bad = Checkpoint::new(&out.forecaster, &cfg);
    bad.params.pop();
    assert!(bad.into_forecaster().is_err());
}

#[test]
fn raw_forecast_matches_normalized_path() {
    let ds = small_series(160, 7);
    let out = train(&ds, &small_config()).unwrap();
    let f = &out.forecaster;
    let r = out.splits.test_rows[0];
    let raw = Matrix::from_fn(f.window, 2, |i, j| ds.values[(r - f.window + i, j)]);
    let a = f.predict_raw(&raw).unwrap();
    let b = f.predict(&out.splits.test[0]).unwrap();
    assert!((a - b).abs() < 1e-12);
    let back = f.backtest(&ds, r, r + 1).unwrap();
    assert_eq!(back.len(), 1);
    assert_eq!(back[0].1, ds.values[(r, 1)]);
    assert!((back[0].2 - b).abs() < 1e-12);
}

#[test]
fn rmse_relative_to_target_range_is_scale_invariant() {
    let ds = small_series(200, 8);
    let scaled_values = Matrix::from_fn(ds.len(), 2, |i, j| 40.0 * ds.values[(i, j)] - 7.0);
    let scaled = TimeSeriesDataset::new(
        "scaled",
        ds.timestamps.clone(),
        ds.feature_names.clone(),
        scaled_values,
        None,
    )
    .unwrap();
    let ratio = |d: &TimeSeriesDataset| {
        let out = train(d, &small_config()).unwrap();
        let back = out
            .forecaster
            .backtest(d, out.splits.val_rows[0], d.len())
            .unwrap();
        let y: Vec<f64> = back.iter().map(|b| b.1).collect();
        let yhat: Vec<f64> = back.iter().map(|b| b.2).collect();
        let span = d.normalization.max[1] - d.normalization.min[1];
        regression_metrics(&y, &yhat).unwrap().rmse / span
    };
    let (a, b) = (ratio(&ds), ratio(&scaled));
    assert!((a - b).abs() < 1e-6 * a.max(1e-12), "{a} vs {b}");
}
