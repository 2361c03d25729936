use std::collections::BTreeSet;
use std::time::Instant;

use chrono::{NaiveDate, TimeDelta};
use serde::{Deserialize, Serialize};

use super::{DatasetBundle, Intent, OrchestratorError, Session, TaskPlan};
use crate::data::TimeSeriesDataset;
use crate::hpo::{forecaster_fitness, run_pga, Codec, GeneSpec, Params, PgaConfig, TraceRecord};
use crate::numerics::{clustering_metrics, regression_metrics, ClusterReport, RegressionReport};
use crate::spatial::{
    build_cluster_graphs, build_graph, cosimheat_single, evaluate_cluster_counts,
    initial_similarity, inter_cluster_matrix_with_workers, spectral_cluster, spectral_embedding,
    DiffusionConfig, SimilarityMatrix, DEFAULT_BLEND, DEFAULT_KNN,
};
use crate::temporal::{train, TrainConfig};

use super::catalog::Catalog;

/// Cluster counts tried when the request does not fix `k`.
pub const AUTO_K: std::ops::RangeInclusive<usize> = 2..=8;
/// Training epochs per fitness evaluation when tuning without an explicit epoch count.
pub const HPO_EPOCHS: usize = 10;
/// Upper bound of the hidden-units gene when the request does not give one.
pub const HPO_MAX_HIDDEN: i64 = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Agent {
    Temporal,
    Hpo,
    Spatial,
}

impl Agent {
    pub fn for_intent(intent: Intent) -> Agent {
        match intent {
            Intent::Predict | Intent::InspectNode => Agent::Temporal,
            Intent::Hpo => Agent::Hpo,
            Intent::LocateSensors
            | Intent::Similarity
            | Intent::Cluster
            | Intent::CompareClusters => Agent::Spatial,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodePoint {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedSeries {
    pub id: String,
    pub timestamps: Vec<i64>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedEdge {
    pub source: String,
    pub target: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictOutput {
    pub dataset: String,
    pub series_id: String,
    pub feature: String,
    pub timestamps: Vec<i64>,
    pub actual: Vec<f64>,
    pub predicted: Vec<f64>,
    pub report: Option<RegressionReport>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub epochs_run: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocateOutput {
    pub dataset: String,
    pub points: Vec<NodePoint>,
    /// Cluster of each point when a prior clustering was referenced.
    pub groups: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityOutput {
    pub dataset: String,
    pub node_ids: Vec<String>,
    pub alpha: f64,
    pub theta: f64,
    pub lambda: f64,
    pub knn: usize,
    pub similarity: SimilarityMatrix,
    /// Undirected k-NN edges weighted by the similarity.
    pub edges: Vec<WeightedEdge>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountSummary {
    pub k: usize,
    pub report: ClusterReport,
    pub eigengap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterOutput {
    pub dataset: String,
    pub points: Vec<NodePoint>,
    pub k: usize,
    pub labels: Vec<usize>,
    pub report: ClusterReport,
    /// True when `k` was chosen from the cluster-count table.
    pub auto_selected: bool,
    pub counts: Vec<CountSummary>,
    /// Round whose similarity matrix was clustered; `None` means computed afresh.
    pub similarity_round: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareOutput {
    pub dataset: String,
    pub node_ids: Vec<String>,
    pub labels: Vec<usize>,
    /// Labels of the compared clusters, in matrix order.
    pub clusters: Vec<usize>,
    pub sizes: Vec<usize>,
    pub matrix: Vec<Vec<f64>>,
    pub feature_names: Vec<String>,
    /// Mean sensor feature vector of each compared cluster.
    pub means: Vec<Vec<f64>>,
    pub theta: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InspectOutput {
    pub dataset: String,
    pub feature: String,
    pub cluster: Option<usize>,
    pub series: Vec<NamedSeries>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HpoOutput {
    pub dataset: String,
    pub series_id: String,
    pub best: Params,
    pub best_bits: String,
    pub best_fitness: f64,
    /// Effective search settings.
    pub population: usize,
    pub islands: usize,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub epochs_per_evaluation: usize,
    pub max_hidden: i64,
    pub trace: Vec<TraceRecord>,
}

/// What a step computed. Deterministic for a given plan, session seed and data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "intent", rename_all = "snake_case")]
pub enum IntentOutput {
    Predict(PredictOutput),
    LocateSensors(LocateOutput),
    Similarity(SimilarityOutput),
    Cluster(ClusterOutput),
    CompareClusters(CompareOutput),
    InspectNode(InspectOutput),
    Hpo(HpoOutput),
}

impl IntentOutput {
    pub fn intent(&self) -> Intent {
        match self {
            IntentOutput::Predict(_) => Intent::Predict,
            IntentOutput::LocateSensors(_) => Intent::LocateSensors,
            IntentOutput::Similarity(_) => Intent::Similarity,
            IntentOutput::Cluster(_) => Intent::Cluster,
            IntentOutput::CompareClusters(_) => Intent::CompareClusters,
            IntentOutput::InspectNode(_) => Intent::InspectNode,
            IntentOutput::Hpo(_) => Intent::Hpo,
        }
    }

    pub fn dataset(&self) -> &str {
        match self {
            IntentOutput::Predict(o) => &o.dataset,
            IntentOutput::LocateSensors(o) => &o.dataset,
            IntentOutput::Similarity(o) => &o.dataset,
            IntentOutput::Cluster(o) => &o.dataset,
            IntentOutput::CompareClusters(o) => &o.dataset,
            IntentOutput::InspectNode(o) => &o.dataset,
            IntentOutput::Hpo(o) => &o.dataset,
        }
    }

    /// Sensor ids and their cluster labels, for outputs that carry a clustering.
    pub fn labels(&self) -> Option<(Vec<&str>, &[usize])> {
        match self {
            IntentOutput::Cluster(o) => {
                Some((o.points.iter().map(|p| p.id.as_str()).collect(), &o.labels))
            }
            IntentOutput::CompareClusters(o) => {
                Some((o.node_ids.iter().map(String::as_str).collect(), &o.labels))
            }
            _ => None,
        }
    }

    /// One-line description used in feedback prompts.
    pub fn summary(&self) -> String {
        match self {
            IntentOutput::Predict(o) => format!(
                "predict: {} readings of {} in {}",
                o.actual.len(),
                o.feature,
                o.series_id
            ),
            IntentOutput::LocateSensors(o) => format!("locate_sensors: {} sensors", o.points.len()),
            IntentOutput::Similarity(o) => format!(
                "similarity: {}x{} {:?} matrix",
                o.node_ids.len(),
                o.node_ids.len(),
                o.similarity.kind
            ),
            IntentOutput::Cluster(o) => {
                format!("cluster: {} sensors into {} clusters", o.labels.len(), o.k)
            }
            IntentOutput::CompareClusters(o) => {
                format!("compare_clusters: clusters {:?}", o.clusters)
            }
            IntentOutput::InspectNode(o) => {
                format!("inspect_node: {} series of {}", o.series.len(), o.feature)
            }
            IntentOutput::Hpo(o) => format!("hpo: best {:?} fitness {:.6}", o.best, o.best_fitness),
        }
    }
}

/// A step output with the producing agent and its run statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub agent: Agent,
    pub output: IntentOutput,
    pub elapsed_ms: f64,
    /// Fitness function calls made by a tuning step (cache hits excluded). Under a shared
    /// cache with several islands this count depends on thread timing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fitness_evaluations: Option<usize>,
}

/// Runs every step of `plan` against the session's bound datasets. A step without
/// `from_round` whose input is a clustering consumes the previous step's labels.
pub fn execute_plan(
    plan: &TaskPlan,
    session: &Session,
    catalog: &Catalog,
    workers: usize,
) -> Result<Vec<StepResult>, OrchestratorError> {
    plan.validate()?;
    let mut results: Vec<StepResult> = Vec::new();
    let mut dataset: Option<String> = None;
    for step in plan.steps() {
        let id = match (&step.params.dataset, &dataset) {
            (Some(d), _) => d.clone(),
            (None, Some(d)) => d.clone(),
            (None, None) => session.default_dataset()?.to_string(),
        };
        if !session.datasets.contains(&id) {
            return Err(OrchestratorError::UnboundDataset(id));
        }
        let bundle = catalog
            .get(&id)
            .ok_or_else(|| OrchestratorError::UnknownDataset(id.clone()))?;
        let ctx = StepContext {
            session,
            bundle: &bundle,
            previous: results.last().map(|r| &r.output),
            workers: workers.max(1),
        };
        let start = Instant::now();
        let (output, evaluations) = run_step(step, &ctx)?;
        results.push(StepResult {
            agent: Agent::for_intent(step.intent),
            output,
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
            fitness_evaluations: evaluations,
        });
        dataset = Some(id);
    }
    Ok(results)
}

struct StepContext<'a> {
    session: &'a Session,
    bundle: &'a DatasetBundle,
    previous: Option<&'a IntentOutput>,
    workers: usize,
}

fn run_step(
    step: &TaskPlan,
    ctx: &StepContext,
) -> Result<(IntentOutput, Option<usize>), OrchestratorError> {
    Ok(match step.intent {
        Intent::Predict => (IntentOutput::Predict(predict(step, ctx)?), None),
        Intent::LocateSensors => (IntentOutput::LocateSensors(locate(step, ctx)?), None),
        Intent::Similarity => (IntentOutput::Similarity(similarity(step, ctx)?), None),
        Intent::Cluster => (IntentOutput::Cluster(cluster(step, ctx)?), None),
        Intent::CompareClusters => (IntentOutput::CompareClusters(compare(step, ctx)?), None),
        Intent::InspectNode => (IntentOutput::InspectNode(inspect(step, ctx)?), None),
        Intent::Hpo => {
            let (out, evals) = hpo(step, ctx)?;
            (IntentOutput::Hpo(out), Some(evals))
        }
    })
}

fn day_bounds(from: Option<NaiveDate>, to: Option<NaiveDate>) -> (i64, i64) {
    let start = from.map_or(i64::MIN, |d| {
        d.and_time(Default::default()).and_utc().timestamp()
    });
    let end = to.map_or(i64::MAX, |d| {
        (d + TimeDelta::days(1))
            .and_time(Default::default())
            .and_utc()
            .timestamp()
    });
    (start, end)
}

fn target_column(
    series: &TimeSeriesDataset,
    feature: Option<&str>,
) -> Result<usize, OrchestratorError> {
    match feature {
        Some(name) => series.feature_index(name).ok_or_else(|| {
            OrchestratorError::MissingInput(format!("series {} has no feature {name}", series.id))
        }),
        None => Ok(series.features() - 1),
    }
}

fn predict(step: &TaskPlan, ctx: &StepContext) -> Result<PredictOutput, OrchestratorError> {
    let p = &step.params;
    let series = ctx.bundle.series_for(p.nodes.first().map(String::as_str))?;
    let target = target_column(series, p.feature.as_deref())?;
    let defaults = TrainConfig::default();
    let cfg = TrainConfig {
        epochs: p.epochs.unwrap_or(defaults.epochs),
        seed: ctx.session.seed,
        target_column: Some(target),
        ..defaults
    };
    let outcome = train(series, &cfg)?;
    let (from, to) = if p.date_from.is_some() || p.date_to.is_some() {
        let (a, b) = day_bounds(p.date_from, p.date_to);
        let range = series.time_range(a, b);
        (range.start, range.end)
    } else {
        let rows = &outcome.splits.test_rows;
        (
            rows.first().copied().unwrap_or(0),
            rows.last().map_or(0, |r| r + 1),
        )
    };
    let rows = outcome.forecaster.backtest(series, from, to)?;
    let actual: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let predicted: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let report = if actual.is_empty() {
        None
    } else {
        Some(regression_metrics(&actual, &predicted)?)
    };
    Ok(PredictOutput {
        dataset: ctx.bundle.id.clone(),
        series_id: series.id.clone(),
        feature: series.feature_names[target].clone(),
        timestamps: rows.iter().map(|r| series.timestamps[r.0]).collect(),
        actual,
        predicted,
        report,
        best_epoch: outcome.best_epoch,
        best_val_loss: outcome.best_val_loss,
        epochs_run: outcome.history.len(),
    })
}

fn points(bundle: &DatasetBundle) -> Vec<NodePoint> {
    bundle
        .sensors
        .iter()
        .map(|s| NodePoint {
            id: s.id.clone(),
            lat: s.lat,
            lon: s.lon,
        })
        .collect()
}

fn need_sensors(bundle: &DatasetBundle, at_least: usize) -> Result<(), OrchestratorError> {
    if bundle.sensors.len() < at_least {
        return Err(OrchestratorError::MissingInput(format!(
            "dataset {} has {} sensors, need at least {at_least}",
            bundle.id,
            bundle.sensors.len()
        )));
    }
    Ok(())
}

fn round_output<'a>(
    session: &'a Session,
    round: usize,
    what: &str,
    accept: impl Fn(&IntentOutput) -> bool,
) -> Result<&'a IntentOutput, OrchestratorError> {
    let r = session.round(round)?;
    r.results
        .iter()
        .rev()
        .map(|s| &s.output)
        .find(|o| accept(o))
        .ok_or_else(|| OrchestratorError::MissingInput(format!("round {round} produced no {what}")))
}

/// Labels aligned with the bundle's sensors, from `from_round` or the previous step.
fn referenced_labels(
    step: &TaskPlan,
    ctx: &StepContext,
) -> Result<Option<Vec<usize>>, OrchestratorError> {
    let source = match step.params.from_round {
        Some(r) => Some(round_output(ctx.session, r, "clustering", |o| {
            o.labels().is_some()
        })?),
        None => ctx.previous.filter(|o| o.labels().is_some()),
    };
    let Some(source) = source else {
        return Ok(None);
    };
    let (ids, labels) = source.labels().expect("filtered on labels");
    let aligned = source.dataset() == ctx.bundle.id
        && ids.len() == ctx.bundle.sensors.len()
        && ids.iter().zip(&ctx.bundle.sensors).all(|(a, s)| *a == s.id);
    if !aligned {
        return Err(OrchestratorError::MissingInput(format!(
            "the referenced clustering does not cover the sensors of {}",
            ctx.bundle.id
        )));
    }
    Ok(Some(labels.to_vec()))
}

fn locate(step: &TaskPlan, ctx: &StepContext) -> Result<LocateOutput, OrchestratorError> {
    let bundle = ctx.bundle;
    need_sensors(bundle, 1)?;
    let groups = match step.params.from_round {
        Some(_) => referenced_labels(step, ctx)?,
        None => None,
    };
    let all = points(bundle);
    let keep: Vec<usize> = if step.params.nodes.is_empty() {
        (0..all.len()).collect()
    } else {
        step.params
            .nodes
            .iter()
            .map(|n| bundle.sensor_index(n))
            .collect::<Result<_, _>>()?
    };
    Ok(LocateOutput {
        dataset: bundle.id.clone(),
        points: keep.iter().map(|&i| all[i].clone()).collect(),
        groups: groups.map(|g| keep.iter().map(|&i| g[i]).collect()),
    })
}

fn similarity(step: &TaskPlan, ctx: &StepContext) -> Result<SimilarityOutput, OrchestratorError> {
    let bundle = ctx.bundle;
    need_sensors(bundle, 2)?;
    let defaults = DiffusionConfig::default();
    let alpha = step.params.alpha.unwrap_or(DEFAULT_BLEND);
    let theta = step.params.theta.unwrap_or(defaults.theta);
    let lambda = step.params.lambda.unwrap_or(defaults.lambda);
    let initial = initial_similarity(&bundle.sensors, alpha)?;
    let knn = DEFAULT_KNN.min(bundle.sensors.len() - 1);
    let graph = build_graph(&bundle.sensors, &initial, knn)?;
    let sim = if lambda > 0.0 {
        cosimheat_single(
            &graph,
            &DiffusionConfig {
                lambda,
                theta,
                s0: None,
            },
        )?
    } else {
        initial
    };
    let n = bundle.sensors.len();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if graph.adjacency[(i, j)] > 0.0 || graph.adjacency[(j, i)] > 0.0 {
                edges.push(WeightedEdge {
                    source: bundle.sensors[i].id.clone(),
                    target: bundle.sensors[j].id.clone(),
                    weight: 0.5 * (sim.values[(i, j)] + sim.values[(j, i)]),
                });
            }
        }
    }
    Ok(SimilarityOutput {
        dataset: bundle.id.clone(),
        node_ids: bundle.sensors.iter().map(|s| s.id.clone()).collect(),
        alpha,
        theta,
        lambda,
        knn,
        similarity: sim,
        edges,
    })
}

fn cluster(step: &TaskPlan, ctx: &StepContext) -> Result<ClusterOutput, OrchestratorError> {
    let bundle = ctx.bundle;
    need_sensors(bundle, 3)?;
    let (sim, similarity_round) = match step.params.from_round {
        Some(r) => {
            let out = round_output(ctx.session, r, "similarity matrix", |o| {
                matches!(o, IntentOutput::Similarity(_))
            })?;
            let IntentOutput::Similarity(s) = out else {
                unreachable!("filtered on similarity")
            };
            let ids: Vec<&str> = bundle.sensors.iter().map(|s| s.id.as_str()).collect();
            if s.dataset != bundle.id || s.node_ids.iter().map(String::as_str).ne(ids) {
                return Err(OrchestratorError::MissingInput(format!(
                    "round {r} similarity does not cover the sensors of {}",
                    bundle.id
                )));
            }
            (s.similarity.clone(), Some(r))
        }
        None => {
            let mut sim_step = step.clone();
            sim_step.params.k = None;
            (similarity(&sim_step, ctx)?.similarity, None)
        }
    };
    let seed = ctx.session.seed;
    let (k, labels, report, counts, auto) = match step.params.k {
        Some(k) => {
            let labels = spectral_cluster(&sim, k, seed)?;
            let emb = spectral_embedding(&sim, k)?;
            let report = clustering_metrics(&emb, &labels)?;
            (k, labels, report, Vec::new(), false)
        }
        None => {
            let table = evaluate_cluster_counts(&sim, AUTO_K, seed)?;
            let counts = table
                .rows
                .iter()
                .map(|r| CountSummary {
                    k: r.k,
                    report: r.report,
                    eigengap: r.eigengap,
                })
                .collect();
            let row = table
                .rows
                .iter()
                .find(|r| r.k == table.recommended)
                .expect("recommended count is a row");
            (row.k, row.labels.clone(), row.report, counts, true)
        }
    };
    Ok(ClusterOutput {
        dataset: bundle.id.clone(),
        points: points(bundle),
        k,
        labels,
        report,
        auto_selected: auto,
        counts,
        similarity_round,
    })
}

fn compare(step: &TaskPlan, ctx: &StepContext) -> Result<CompareOutput, OrchestratorError> {
    let bundle = ctx.bundle;
    let labels = match referenced_labels(step, ctx)? {
        Some(l) => l,
        None => {
            let mut c = step.clone();
            c.params.clusters.clear();
            c.params.from_round = None;
            cluster(&c, ctx)?.labels
        }
    };
    let graphs = build_cluster_graphs(&bundle.sensors, &labels, &bundle.streets)?;
    let defaults = DiffusionConfig::default();
    let cfg = DiffusionConfig {
        lambda: step.params.lambda.unwrap_or(defaults.lambda),
        theta: step.params.theta.unwrap_or(defaults.theta),
        s0: None,
    };
    let all_labels: Vec<usize> = graphs.clusters.iter().map(|c| c.label).collect();
    let picked: Vec<usize> = if step.params.clusters.is_empty() {
        (0..all_labels.len()).collect()
    } else {
        step.params
            .clusters
            .iter()
            .map(|l| {
                all_labels.iter().position(|a| a == l).ok_or_else(|| {
                    OrchestratorError::MissingInput(format!(
                        "no cluster {l}; labels are {all_labels:?}"
                    ))
                })
            })
            .collect::<Result<_, _>>()?
    };
    let full = inter_cluster_matrix_with_workers(&graphs, &cfg, ctx.workers)?;
    let dim = bundle.sensors.first().map_or(0, |s| s.features.len());
    let means = picked
        .iter()
        .map(|&c| {
            let members = &graphs.clusters[c].members;
            (0..dim)
                .map(|j| {
                    members
                        .iter()
                        .map(|&i| bundle.sensors[i].features[j])
                        .sum::<f64>()
                        / members.len() as f64
                })
                .collect()
        })
        .collect();
    let feature_names = if bundle.sensor_features.len() == dim {
        bundle.sensor_features.clone()
    } else {
        (0..dim).map(|j| format!("f{j}")).collect()
    };
    Ok(CompareOutput {
        dataset: bundle.id.clone(),
        node_ids: bundle.sensors.iter().map(|s| s.id.clone()).collect(),
        labels,
        clusters: picked.iter().map(|&c| all_labels[c]).collect(),
        sizes: picked
            .iter()
            .map(|&c| graphs.clusters[c].members.len())
            .collect(),
        matrix: picked
            .iter()
            .map(|&i| picked.iter().map(|&j| full[(i, j)]).collect())
            .collect(),
        feature_names,
        means,
        theta: cfg.theta,
        lambda: cfg.lambda,
    })
}

fn inspect(step: &TaskPlan, ctx: &StepContext) -> Result<InspectOutput, OrchestratorError> {
    let p = &step.params;
    let bundle = ctx.bundle;
    let nodes: Vec<Option<String>> = match p.cluster {
        Some(c) => {
            let labels = referenced_labels(step, ctx)?.ok_or_else(|| {
                OrchestratorError::MissingInput(format!(
                    "cluster {c} needs a clustering from an earlier step or round"
                ))
            })?;
            let members: Vec<Option<String>> = bundle
                .sensors
                .iter()
                .zip(&labels)
                .filter(|(_, &l)| l == c)
                .map(|(s, _)| Some(s.id.clone()))
                .collect();
            if members.is_empty() {
                return Err(OrchestratorError::MissingInput(format!(
                    "cluster {c} has no members"
                )));
            }
            members
        }
        None if p.nodes.is_empty() => vec![None],
        None => p.nodes.iter().cloned().map(Some).collect(),
    };
    let (from, to) = day_bounds(p.date_from, p.date_to);
    let mut feature = None;
    let mut series = Vec::with_capacity(nodes.len());
    for node in &nodes {
        let ds = bundle.series_for(node.as_deref())?;
        let col = target_column(ds, p.feature.as_deref())?;
        feature.get_or_insert_with(|| ds.feature_names[col].clone());
        let rows: Vec<usize> = ds.time_range(from, to).filter(|&i| ds.valid[i]).collect();
        series.push(NamedSeries {
            id: node.clone().unwrap_or_else(|| ds.id.clone()),
            timestamps: rows.iter().map(|&i| ds.timestamps[i]).collect(),
            values: rows.iter().map(|&i| ds.values[(i, col)]).collect(),
        });
    }
    Ok(InspectOutput {
        dataset: bundle.id.clone(),
        feature: feature.unwrap_or_default(),
        cluster: p.cluster,
        series,
    })
}

fn hpo(step: &TaskPlan, ctx: &StepContext) -> Result<(HpoOutput, usize), OrchestratorError> {
    let p = &step.params;
    let series = ctx.bundle.series_for(p.nodes.first().map(String::as_str))?;
    let target = target_column(series, p.feature.as_deref())?;
    let base = TrainConfig {
        epochs: p.epochs.unwrap_or(HPO_EPOCHS),
        seed: ctx.session.seed,
        target_column: Some(target),
        ..TrainConfig::default()
    };
    let max_hidden = p.max_hidden.unwrap_or(HPO_MAX_HIDDEN);
    let codec = Codec::new(vec![GeneSpec::new("hidden_units", 1, max_hidden)])?;
    let defaults = PgaConfig::default();
    let cfg = PgaConfig {
        population: p.population.unwrap_or(defaults.population),
        islands: p.islands.unwrap_or(defaults.islands),
        outer_iterations: p.outer_iterations.unwrap_or(defaults.outer_iterations),
        inner_iterations: p.inner_iterations.unwrap_or(defaults.inner_iterations),
        seed: ctx.session.seed,
        workers: Some(ctx.workers),
        ..defaults
    };
    let fitness = forecaster_fitness(series, &base);
    let outcome = run_pga(&cfg, &codec, &fitness).map_err(|f| OrchestratorError::Hpo(f.error))?;
    Ok((
        HpoOutput {
            dataset: ctx.bundle.id.clone(),
            series_id: series.id.clone(),
            best: outcome.best.chromosome.decoded.clone(),
            best_bits: outcome.best.chromosome.bit_string(),
            best_fitness: outcome.best.fitness,
            population: cfg.population,
            islands: cfg.islands,
            outer_iterations: cfg.outer_iterations,
            inner_iterations: cfg.inner_iterations,
            epochs_per_evaluation: base.epochs,
            max_hidden,
            trace: outcome.trace,
        },
        outcome.evaluations,
    ))
}

/// Distinct labels in ascending order.
pub fn label_set(labels: &[usize]) -> Vec<usize> {
    labels
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}
