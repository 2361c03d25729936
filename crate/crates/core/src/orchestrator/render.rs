use chrono::DateTime;
use serde::{Deserialize, Serialize};

use super::execute::{
    ClusterOutput, CompareOutput, HpoOutput, InspectOutput, LocateOutput, PredictOutput,
    SimilarityOutput,
};
use super::{IntentOutput, OrchestratorError, StepResult, TaskPlan, VisualizationKind};
use crate::numerics::ClusterReport;

pub const PAYLOAD_SCHEMA_VERSION: u32 = 1;

/// Relative gap between the highest and lowest cluster mean that the comparison narrative
/// calls significant.
pub const SIGNIFICANT_GAP: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
}

impl Axis {
    fn new(label: &str, unit: Option<&str>) -> Self {
        Self {
            label: label.into(),
            unit: unit.map(Into::into),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axes {
    pub x: Axis,
    pub y: Axis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineSeries {
    pub name: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapPoint {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub source: String,
    pub target: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParallelLine {
    pub name: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub label: usize,
    pub size: usize,
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "data", rename_all = "snake_case")]
pub enum PayloadBody {
    Line {
        series: Vec<LineSeries>,
    },
    ScatterMap {
        points: Vec<MapPoint>,
    },
    ForceGraph {
        nodes: Vec<GraphNode>,
        edges: Vec<GraphEdge>,
    },
    Heatmap {
        rows: Vec<String>,
        cols: Vec<String>,
        values: Vec<Vec<f64>>,
    },
    ParallelCoords {
        dimensions: Vec<String>,
        lines: Vec<ParallelLine>,
    },
    ClusterMap {
        points: Vec<MapPoint>,
        clusters: Vec<ClusterSummary>,
        metrics: ClusterReport,
    },
}

impl PayloadBody {
    pub fn kind(&self) -> VisualizationKind {
        match self {
            PayloadBody::Line { .. } => VisualizationKind::Line,
            PayloadBody::ScatterMap { .. } => VisualizationKind::ScatterMap,
            PayloadBody::ForceGraph { .. } => VisualizationKind::ForceGraph,
            PayloadBody::Heatmap { .. } => VisualizationKind::Heatmap,
            PayloadBody::ParallelCoords { .. } => VisualizationKind::ParallelCoords,
            PayloadBody::ClusterMap { .. } => VisualizationKind::ClusterMap,
        }
    }
}

/// A chart for the web UI: kind-tagged data plus axes and a narrative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisualizationPayload {
    pub schema_version: u32,
    pub title: String,
    #[serde(flatten)]
    pub body: PayloadBody,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axes: Option<Axes>,
    pub narrative: String,
    /// The template narrative, kept when `narrative` was rewritten by the language model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub narrative_template: Option<String>,
}

/// Charts plus explanations for steps whose result was empty.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Rendering {
    pub payloads: Vec<VisualizationPayload>,
    pub notices: Vec<String>,
}

impl VisualizationPayload {
    pub fn kind(&self) -> VisualizationKind {
        self.body.kind()
    }

    /// Nonempty data, consistent lengths, finite numbers, known references.
    pub fn validate(&self) -> Result<(), OrchestratorError> {
        let bad = |m: String| {
            Err(OrchestratorError::Payload(format!(
                "{}: {m}",
                self.kind().as_str()
            )))
        };
        if self.schema_version != PAYLOAD_SCHEMA_VERSION {
            return bad(format!("schema version {}", self.schema_version));
        }
        if self.narrative.trim().is_empty() {
            return bad("narrative is empty".into());
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match &self.body {
            PayloadBody::Line { series } => {
                if series.is_empty() || series.iter().any(|s| s.x.is_empty()) {
                    return bad("no points".into());
                }
                if series
                    .iter()
                    .any(|s| s.x.len() != s.y.len() || !finite(&s.x) || !finite(&s.y))
                {
                    return bad("series x/y differ in length or are not finite".into());
                }
            }
            PayloadBody::ScatterMap { points } => {
                if points.is_empty() {
                    return bad("no points".into());
                }
                if points.iter().any(|p| !valid_position(p.lat, p.lon)) {
                    return bad("position out of range".into());
                }
            }
            PayloadBody::ForceGraph { nodes, edges } => {
                if nodes.is_empty() {
                    return bad("no nodes".into());
                }
                let known = |id: &str| nodes.iter().any(|n| n.id == id);
                if edges
                    .iter()
                    .any(|e| !known(&e.source) || !known(&e.target) || !e.weight.is_finite())
                {
                    return bad("edge references an unknown node or has a non-finite weight".into());
                }
            }
            PayloadBody::Heatmap { rows, cols, values } => {
                if rows.is_empty() || cols.is_empty() {
                    return bad("no cells".into());
                }
                if values.len() != rows.len()
                    || values.iter().any(|r| r.len() != cols.len() || !finite(r))
                {
                    return bad("values do not match the row and column labels".into());
                }
            }
            PayloadBody::ParallelCoords { dimensions, lines } => {
                if dimensions.is_empty() || lines.is_empty() {
                    return bad("no lines".into());
                }
                if lines
                    .iter()
                    .any(|l| l.values.len() != dimensions.len() || !finite(&l.values))
                {
                    return bad("line values do not match the dimensions".into());
                }
            }
            PayloadBody::ClusterMap {
                points,
                clusters,
                metrics,
            } => {
                if points.is_empty() || clusters.is_empty() {
                    return bad("no points".into());
                }
                if points.iter().any(|p| {
                    !valid_position(p.lat, p.lon)
                        || !p
                            .group
                            .is_some_and(|g| clusters.iter().any(|c| c.label == g))
                }) {
                    return bad("point outside the listed clusters or out of range".into());
                }
                if clusters.iter().map(|c| c.size).sum::<usize>() != points.len() {
                    return bad("cluster sizes do not add up to the points".into());
                }
                if !finite(&[metrics.sc, metrics.ch, metrics.db]) {
                    return bad("metrics are not finite".into());
                }
            }
        }
        Ok(())
    }
}

fn valid_position(lat: f64, lon: f64) -> bool {
    (-90.0..=90.0).contains(&lat) && (-180.0..=180.0).contains(&lon)
}

fn fmt_time(ts: i64) -> String {
    DateTime::from_timestamp(ts, 0)
        .map(|d| d.format("%Y-%m-%d %H:%M").to_string())
        .unwrap_or_else(|| ts.to_string())
}

/// One payload per non-empty step, in step order, using each step's visualization.
pub fn render_results(
    plan: &TaskPlan,
    results: &[StepResult],
) -> Result<Rendering, OrchestratorError> {
    let steps = plan.steps();
    if steps.len() != results.len() {
        return Err(OrchestratorError::Payload(format!(
            "{} results for a {}-step plan",
            results.len(),
            steps.len()
        )));
    }
    let mut out = Rendering::default();
    for (step, result) in steps.into_iter().zip(results) {
        if result.output.intent() != step.intent {
            return Err(OrchestratorError::Payload(format!(
                "{} result for a {} step",
                result.output.intent().as_str(),
                step.intent.as_str()
            )));
        }
        match render_output(&result.output, step.visualization)? {
            Some(p) => {
                p.validate()?;
                out.payloads.push(p);
            }
            None => out.notices.push(empty_notice(&result.output)),
        }
    }
    Ok(out)
}

fn empty_notice(out: &IntentOutput) -> String {
    match out {
        IntentOutput::Predict(o) => format!(
            "No forecastable {} readings of {} fall in the requested range; a forecast needs a full input window of earlier valid readings.",
            o.feature, o.series_id
        ),
        IntentOutput::InspectNode(o) => format!(
            "No valid {} readings fall in the requested range for {}.",
            o.feature,
            o.series.iter().map(|s| s.id.as_str()).collect::<Vec<_>>().join(", ")
        ),
        other => format!("The {} step returned no data to chart.", other.intent().as_str()),
    }
}

/// `None` when the output holds no data to chart.
pub fn render_output(
    out: &IntentOutput,
    kind: VisualizationKind,
) -> Result<Option<VisualizationPayload>, OrchestratorError> {
    use VisualizationKind as V;
    let payload = match (out, kind) {
        (IntentOutput::Predict(o), V::Line) => predict_line(o),
        (IntentOutput::InspectNode(o), V::Line) => inspect_line(o),
        (IntentOutput::Hpo(o), V::Line) => hpo_line(o),
        (IntentOutput::LocateSensors(o), V::ScatterMap) => locate_map(o),
        (IntentOutput::Similarity(o), V::Heatmap) => Some(similarity_heatmap(o)),
        (IntentOutput::Similarity(o), V::ForceGraph) => Some(similarity_graph(o)),
        (IntentOutput::Cluster(o), V::ClusterMap) => Some(cluster_map(o)),
        (IntentOutput::CompareClusters(o), V::Heatmap) => Some(compare_heatmap(o)),
        (IntentOutput::CompareClusters(o), V::ParallelCoords) => Some(compare_parallel(o)),
        (o, k) => {
            return Err(OrchestratorError::Payload(format!(
                "{} cannot be shown as {}",
                o.intent().as_str(),
                k.as_str()
            )))
        }
    };
    Ok(payload)
}

fn payload(
    title: String,
    body: PayloadBody,
    axes: Option<Axes>,
    narrative: String,
) -> VisualizationPayload {
    VisualizationPayload {
        schema_version: PAYLOAD_SCHEMA_VERSION,
        title,
        body,
        axes,
        narrative,
        narrative_template: None,
    }
}

fn time_axes(y: &str) -> Option<Axes> {
    Some(Axes {
        x: Axis::new("time", Some("unix seconds")),
        y: Axis::new(y, None),
    })
}

fn predict_line(o: &PredictOutput) -> Option<VisualizationPayload> {
    if o.actual.is_empty() {
        return None;
    }
    let x: Vec<f64> = o.timestamps.iter().map(|&t| t as f64).collect();
    let series = vec![
        LineSeries {
            name: "actual".into(),
            x: x.clone(),
            y: o.actual.clone(),
        },
        LineSeries {
            name: "predicted".into(),
            x,
            y: o.predicted.clone(),
        },
    ];
    let mut narrative = format!(
        "One-step-ahead forecast of {} for {} over {} readings from {} to {}",
        o.feature,
        o.series_id,
        o.actual.len(),
        fmt_time(o.timestamps[0]),
        fmt_time(*o.timestamps.last().expect("nonempty"))
    );
    if let Some(r) = &o.report {
        narrative.push_str(&format!(": RMSE {:.4}, MAE {:.4}", r.rmse, r.mae));
        if let Some(r2) = r.r2 {
            narrative.push_str(&format!(", R² {r2:.3}"));
        }
    }
    narrative.push_str(&format!(
        ". Best validation loss {:.6} at epoch {} of {}.",
        o.best_val_loss,
        o.best_epoch + 1,
        o.epochs_run
    ));
    Some(payload(
        format!("Real and predicted {} for {}", o.feature, o.series_id),
        PayloadBody::Line { series },
        time_axes(&o.feature),
        narrative,
    ))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn inspect_line(o: &InspectOutput) -> Option<VisualizationPayload> {
    let series: Vec<LineSeries> = o
        .series
        .iter()
        .filter(|s| !s.values.is_empty())
        .map(|s| LineSeries {
            name: s.id.clone(),
            x: s.timestamps.iter().map(|&t| t as f64).collect(),
            y: s.values.clone(),
        })
        .collect();
    if series.is_empty() {
        return None;
    }
    let narrative = if let [s] = series.as_slice() {
        let (lo, hi) = extremes(&s.y);
        format!(
            "{} at {}: mean {:.3}, minimum {:.3} at {}, maximum {:.3} at {} over {} readings.",
            o.feature,
            s.name,
            mean(&s.y),
            s.y[lo],
            fmt_time(s.x[lo] as i64),
            s.y[hi],
            fmt_time(s.x[hi] as i64),
            s.y.len()
        )
    } else {
        let means: Vec<f64> = series.iter().map(|s| mean(&s.y)).collect();
        let (lo, hi) = extremes(&means);
        let scope = match o.cluster {
            Some(c) => format!("{} sensors of cluster {c}", series.len()),
            None => format!("{} sensors", series.len()),
        };
        format!(
            "{} across {scope}: highest mean at {} ({:.3}), lowest at {} ({:.3}).",
            o.feature, series[hi].name, means[hi], series[lo].name, means[lo]
        )
    };
    let title = match o.cluster {
        Some(c) => format!("{} of cluster {c}", o.feature),
        None => format!(
            "{} of {}",
            o.feature,
            series
                .iter()
                .map(|s| s.name.as_str())
                .collect::<Vec<_>>()
                .join(", ")
        ),
    };
    Some(payload(
        title,
        PayloadBody::Line { series },
        time_axes(&o.feature),
        narrative,
    ))
}

/// Indices of the first minimum and first maximum.
fn extremes(v: &[f64]) -> (usize, usize) {
    let mut lo = 0;
    let mut hi = 0;
    for (i, &x) in v.iter().enumerate() {
        if x < v[lo] {
            lo = i;
        }
        if x > v[hi] {
            hi = i;
        }
    }
    (lo, hi)
}

fn hpo_line(o: &HpoOutput) -> Option<VisualizationPayload> {
    let islands = o.trace.iter().map(|t| t.island).max()? + 1;
    let series: Vec<LineSeries> = (0..islands)
        .map(|i| {
            let recs: Vec<_> = o.trace.iter().filter(|t| t.island == i).collect();
            LineSeries {
                name: format!("island {i}"),
                x: recs.iter().map(|t| t.generation as f64).collect(),
                y: recs.iter().map(|t| t.best_fitness).collect(),
            }
        })
        .collect();
    let best = o
        .best
        .iter()
        .map(|(k, v)| format!("{k} = {v}"))
        .collect::<Vec<_>>()
        .join(", ");
    let generations = o.trace.iter().map(|t| t.generation).max().unwrap_or(0);
    Some(payload(
        format!("Hyperparameter search on {}", o.series_id),
        PayloadBody::Line { series },
        Some(Axes {
            x: Axis::new("generation", None),
            y: Axis::new("best validation RMSE", Some("normalized")),
        }),
        format!(
            "Best configuration {best} with validation RMSE {:.5} after {generations} generations on {islands} islands.",
            o.best_fitness
        ),
    ))
}

fn bounds(points: &[MapPoint]) -> (f64, f64, f64, f64) {
    points.iter().fold(
        (
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::INFINITY,
            f64::NEG_INFINITY,
        ),
        |(a, b, c, d), p| (a.min(p.lat), b.max(p.lat), c.min(p.lon), d.max(p.lon)),
    )
}

fn locate_map(o: &LocateOutput) -> Option<VisualizationPayload> {
    if o.points.is_empty() {
        return None;
    }
    let points: Vec<MapPoint> = o
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| MapPoint {
            id: p.id.clone(),
            lat: p.lat,
            lon: p.lon,
            group: o.groups.as_ref().map(|g| g[i]),
        })
        .collect();
    let (la, lb, oa, ob) = bounds(&points);
    let mut narrative = format!(
        "{} sensors between latitude {la:.4} and {lb:.4}, longitude {oa:.4} and {ob:.4}.",
        points.len()
    );
    if let Some(g) = &o.groups {
        let k = g
            .iter()
            .copied()
            .collect::<std::collections::BTreeSet<_>>()
            .len();
        narrative.push_str(&format!(
            " Colours show {k} clusters from the referenced round."
        ));
    }
    Some(payload(
        format!("Sensor locations in {}", o.dataset),
        PayloadBody::ScatterMap { points },
        Some(Axes {
            x: Axis::new("longitude", Some("degrees")),
            y: Axis::new("latitude", Some("degrees")),
        }),
        narrative,
    ))
}

/// Most and least similar distinct pairs `(i, j, value)` of a square matrix, `i < j`.
fn pair_extremes(values: &[Vec<f64>]) -> Option<((usize, usize, f64), (usize, usize, f64))> {
    let n = values.len();
    let mut hi: Option<(usize, usize, f64)> = None;
    let mut lo: Option<(usize, usize, f64)> = None;
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (values[i][j] + values[j][i]);
            if hi.is_none_or(|h| v > h.2) {
                hi = Some((i, j, v));
            }
            if lo.is_none_or(|l| v < l.2) {
                lo = Some((i, j, v));
            }
        }
    }
    Some((hi?, lo?))
}

fn similarity_heatmap(o: &SimilarityOutput) -> VisualizationPayload {
    let values = o.similarity.values.to_rows();
    let ids = &o.node_ids;
    let method = if o.lambda > 0.0 {
        format!(
            "heat-diffusion similarity (λ = {}, θ = {})",
            o.lambda, o.theta
        )
    } else {
        format!("initial similarity (α = {})", o.alpha)
    };
    let mut narrative = format!("{} × {} {method}.", ids.len(), ids.len());
    if let Some(((a, b, hv), (c, d, lv))) = pair_extremes(&values) {
        narrative.push_str(&format!(
            " Most similar pair {} and {} ({hv:.4}); least similar {} and {} ({lv:.4}).",
            ids[a], ids[b], ids[c], ids[d]
        ));
    }
    payload(
        format!("Node similarity in {}", o.dataset),
        PayloadBody::Heatmap {
            rows: ids.clone(),
            cols: ids.clone(),
            values,
        },
        Some(Axes {
            x: Axis::new("node", None),
            y: Axis::new("node", None),
        }),
        narrative,
    )
}

fn similarity_graph(o: &SimilarityOutput) -> VisualizationPayload {
    let nodes = o
        .node_ids
        .iter()
        .map(|id| GraphNode {
            id: id.clone(),
            group: None,
        })
        .collect();
    let edges: Vec<GraphEdge> = o
        .edges
        .iter()
        .map(|e| GraphEdge {
            source: e.source.clone(),
            target: e.target.clone(),
            weight: e.weight,
        })
        .collect();
    let mut narrative = format!(
        "{} nodes joined by {} edges of the {}-nearest-neighbour graph, weighted by similarity.",
        o.node_ids.len(),
        edges.len(),
        o.knn
    );
    if let Some(e) = edges.iter().fold(None::<&GraphEdge>, |best, e| match best {
        Some(b) if b.weight >= e.weight => Some(b),
        _ => Some(e),
    }) {
        narrative.push_str(&format!(
            " Strongest link {} and {} ({:.4}).",
            e.source, e.target, e.weight
        ));
    }
    payload(
        format!("Similarity graph of {}", o.dataset),
        PayloadBody::ForceGraph { nodes, edges },
        None,
        narrative,
    )
}

fn cluster_map(o: &ClusterOutput) -> VisualizationPayload {
    let points: Vec<MapPoint> = o
        .points
        .iter()
        .zip(&o.labels)
        .map(|(p, &l)| MapPoint {
            id: p.id.clone(),
            lat: p.lat,
            lon: p.lon,
            group: Some(l),
        })
        .collect();
    let labels = super::execute::label_set(&o.labels);
    let clusters: Vec<ClusterSummary> = labels
        .iter()
        .map(|&l| {
            let members: Vec<&MapPoint> = points.iter().filter(|p| p.group == Some(l)).collect();
            let n = members.len() as f64;
            ClusterSummary {
                label: l,
                size: members.len(),
                lat: members.iter().map(|p| p.lat).sum::<f64>() / n,
                lon: members.iter().map(|p| p.lon).sum::<f64>() / n,
            }
        })
        .collect();
    let sizes = clusters
        .iter()
        .map(|c| c.size.to_string())
        .collect::<Vec<_>>()
        .join(", ");
    let r = &o.report;
    let mut narrative = format!(
        "Spectral clustering grouped {} sensors into {} clusters of sizes {sizes}. Silhouette {:.3}, Calinski-Harabasz {:.1}, Davies-Bouldin {:.3}.",
        points.len(),
        clusters.len(),
        r.sc,
        r.ch,
        r.db
    );
    if o.auto_selected {
        narrative.push_str(&format!(
            " k = {} has the largest Calinski-Harabasz index among the counts {}..={} whose Davies-Bouldin index is within 5% of the best.",
            o.k,
            o.counts.first().map_or(o.k, |c| c.k),
            o.counts.last().map_or(o.k, |c| c.k)
        ));
    }
    if let Some(round) = o.similarity_round {
        narrative.push_str(&format!(
            " Clustered the similarity matrix of round {round}."
        ));
    }
    payload(
        format!("Sensor clusters in {}", o.dataset),
        PayloadBody::ClusterMap {
            points,
            clusters,
            metrics: o.report,
        },
        Some(Axes {
            x: Axis::new("longitude", Some("degrees")),
            y: Axis::new("latitude", Some("degrees")),
        }),
        narrative,
    )
}

fn cluster_names(labels: &[usize]) -> Vec<String> {
    labels.iter().map(|l| format!("cluster {l}")).collect()
}

fn compare_heatmap(o: &CompareOutput) -> VisualizationPayload {
    let names = cluster_names(&o.clusters);
    let mut narrative = format!(
        "Inter-cluster heat-diffusion similarity over street adjacency (λ = {}, θ = {}); each cluster scores 1 with itself.",
        o.lambda, o.theta
    );
    if let Some(((a, b, hv), (c, d, lv))) = pair_extremes(&o.matrix) {
        if (a, b) == (c, d) {
            narrative.push_str(&format!(" {} and {} score {hv:.4}.", names[a], names[b]));
        } else {
            narrative.push_str(&format!(
                " Most similar: {} and {} ({hv:.4}); least similar: {} and {} ({lv:.4}).",
                names[a], names[b], names[c], names[d]
            ));
        }
    }
    payload(
        format!("Inter-cluster similarity in {}", o.dataset),
        PayloadBody::Heatmap {
            rows: names.clone(),
            cols: names,
            values: o.matrix.clone(),
        },
        Some(Axes {
            x: Axis::new("cluster", None),
            y: Axis::new("cluster", None),
        }),
        narrative,
    )
}

fn compare_parallel(o: &CompareOutput) -> VisualizationPayload {
    let names = cluster_names(&o.clusters);
    let lines = names
        .iter()
        .zip(&o.means)
        .map(|(n, m)| ParallelLine {
            name: n.clone(),
            values: m.clone(),
        })
        .collect();
    let mut sentences = Vec::new();
    for (j, dim) in o.feature_names.iter().enumerate() {
        let col: Vec<f64> = o.means.iter().map(|m| m[j]).collect();
        let (lo, hi) = extremes(&col);
        if lo == hi {
            sentences.push(format!(
                "{dim} is the same in every cluster ({:.3}).",
                col[hi]
            ));
            continue;
        }
        let gap = (col[hi] - col[lo]) / col[lo].abs().max(f64::MIN_POSITIVE);
        let phrase = if gap >= SIGNIFICANT_GAP {
            "significantly higher than in"
        } else {
            "slightly higher than in"
        };
        sentences.push(format!(
            "{dim} in {} is {phrase} {} ({:.3} vs {:.3}).",
            names[hi], names[lo], col[hi], col[lo]
        ));
    }
    let sizes = o
        .clusters
        .iter()
        .zip(&o.sizes)
        .map(|(c, s)| format!("cluster {c}: {s}"))
        .collect::<Vec<_>>()
        .join(", ");
    payload(
        format!("Cluster feature profiles in {}", o.dataset),
        PayloadBody::ParallelCoords {
            dimensions: o.feature_names.clone(),
            lines,
        },
        None,
        format!(
            "Mean sensor features per cluster ({sizes}). {}",
            sentences.join(" ")
        ),
    )
}
