use std::collections::BTreeSet;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::OrchestratorError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Intent {
    Predict,
    LocateSensors,
    Similarity,
    Cluster,
    CompareClusters,
    InspectNode,
    Hpo,
}

impl Intent {
    pub const ALL: [Intent; 7] = [
        Intent::Predict,
        Intent::LocateSensors,
        Intent::Similarity,
        Intent::Cluster,
        Intent::CompareClusters,
        Intent::InspectNode,
        Intent::Hpo,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Intent::Predict => "predict",
            Intent::LocateSensors => "locate_sensors",
            Intent::Similarity => "similarity",
            Intent::Cluster => "cluster",
            Intent::CompareClusters => "compare_clusters",
            Intent::InspectNode => "inspect_node",
            Intent::Hpo => "hpo",
        }
    }

    pub fn parse(s: &str) -> Option<Intent> {
        Intent::ALL.into_iter().find(|i| i.as_str() == s)
    }

    /// Visualization used when the request does not ask for a specific one.
    pub fn default_visualization(self) -> VisualizationKind {
        self.visualizations()[0]
    }

    /// Visualizations that can present this intent's result, default first.
    pub fn visualizations(self) -> &'static [VisualizationKind] {
        use VisualizationKind::*;
        match self {
            Intent::Predict | Intent::InspectNode | Intent::Hpo => &[Line],
            Intent::LocateSensors => &[ScatterMap],
            Intent::Similarity => &[Heatmap, ForceGraph],
            Intent::Cluster => &[ClusterMap],
            Intent::CompareClusters => &[ParallelCoords, Heatmap],
        }
    }

    /// Parameters this intent accepts.
    pub fn accepts(self, p: Param) -> bool {
        use Param::*;
        let allowed: &[Param] = match self {
            Intent::Predict => &[Dataset, Nodes, Feature, DateFrom, DateTo, Epochs],
            Intent::LocateSensors => &[Dataset, Nodes, FromRound],
            Intent::Similarity => &[Dataset, Alpha, Theta, Lambda],
            Intent::Cluster => &[Dataset, K, Alpha, Theta, Lambda, FromRound],
            Intent::CompareClusters => &[Dataset, K, Clusters, Alpha, Theta, Lambda, FromRound],
            Intent::InspectNode => &[
                Dataset, Nodes, Cluster, Feature, DateFrom, DateTo, FromRound,
            ],
            Intent::Hpo => &[
                Dataset,
                Nodes,
                Feature,
                Epochs,
                Islands,
                Population,
                OuterIterations,
                InnerIterations,
                MaxHidden,
            ],
        };
        allowed.contains(&p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VisualizationKind {
    Line,
    ScatterMap,
    ForceGraph,
    Heatmap,
    ParallelCoords,
    ClusterMap,
}

impl VisualizationKind {
    pub const ALL: [VisualizationKind; 6] = [
        VisualizationKind::Line,
        VisualizationKind::ScatterMap,
        VisualizationKind::ForceGraph,
        VisualizationKind::Heatmap,
        VisualizationKind::ParallelCoords,
        VisualizationKind::ClusterMap,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            VisualizationKind::Line => "line",
            VisualizationKind::ScatterMap => "scatter_map",
            VisualizationKind::ForceGraph => "force_graph",
            VisualizationKind::Heatmap => "heatmap",
            VisualizationKind::ParallelCoords => "parallel_coords",
            VisualizationKind::ClusterMap => "cluster_map",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Llm,
    Rules,
}

/// Parameter names, used for intent compatibility checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Param {
    Dataset,
    Nodes,
    DateFrom,
    DateTo,
    K,
    Alpha,
    Theta,
    Lambda,
    Clusters,
    Cluster,
    Feature,
    FromRound,
    Epochs,
    Islands,
    Population,
    OuterIterations,
    InnerIterations,
    MaxHidden,
}

impl Param {
    pub fn as_str(self) -> &'static str {
        match self {
            Param::Dataset => "dataset",
            Param::Nodes => "nodes",
            Param::DateFrom => "date_from",
            Param::DateTo => "date_to",
            Param::K => "k",
            Param::Alpha => "alpha",
            Param::Theta => "theta",
            Param::Lambda => "lambda",
            Param::Clusters => "clusters",
            Param::Cluster => "cluster",
            Param::Feature => "feature",
            Param::FromRound => "from_round",
            Param::Epochs => "epochs",
            Param::Islands => "islands",
            Param::Population => "population",
            Param::OuterIterations => "outer_iterations",
            Param::InnerIterations => "inner_iterations",
            Param::MaxHidden => "max_hidden",
        }
    }
}

/// Typed plan parameters. Absent values fall back to the agents' defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanParams {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub nodes: Vec<String>,
    /// First day of the range, inclusive (UTC).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub date_from: Option<NaiveDate>,
    /// Last day of the range, inclusive (UTC).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub date_to: Option<NaiveDate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// Cluster labels to compare.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub clusters: Vec<usize>,
    /// Cluster whose members are inspected.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cluster: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feature: Option<String>,
    /// 1-based index of the session round whose output is reused.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub from_round: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub islands: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub population: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outer_iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inner_iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_hidden: Option<i64>,
}

impl PlanParams {
    /// Names of the parameters that are set.
    pub fn present(&self) -> Vec<Param> {
        let mut out = Vec::new();
        let mut push = |set: bool, p: Param| {
            if set {
                out.push(p)
            }
        };
        push(self.dataset.is_some(), Param::Dataset);
        push(!self.nodes.is_empty(), Param::Nodes);
        push(self.date_from.is_some(), Param::DateFrom);
        push(self.date_to.is_some(), Param::DateTo);
        push(self.k.is_some(), Param::K);
        push(self.alpha.is_some(), Param::Alpha);
        push(self.theta.is_some(), Param::Theta);
        push(self.lambda.is_some(), Param::Lambda);
        push(!self.clusters.is_empty(), Param::Clusters);
        push(self.cluster.is_some(), Param::Cluster);
        push(self.feature.is_some(), Param::Feature);
        push(self.from_round.is_some(), Param::FromRound);
        push(self.epochs.is_some(), Param::Epochs);
        push(self.islands.is_some(), Param::Islands);
        push(self.population.is_some(), Param::Population);
        push(self.outer_iterations.is_some(), Param::OuterIterations);
        push(self.inner_iterations.is_some(), Param::InnerIterations);
        push(self.max_hidden.is_some(), Param::MaxHidden);
        out
    }

    /// Drops every parameter the intent does not accept.
    pub fn retain_for(&mut self, intent: Intent) {
        for p in self.present() {
            if !intent.accepts(p) {
                self.clear(p);
            }
        }
    }

    fn clear(&mut self, p: Param) {
        match p {
            Param::Dataset => self.dataset = None,
            Param::Nodes => self.nodes.clear(),
            Param::DateFrom => self.date_from = None,
            Param::DateTo => self.date_to = None,
            Param::K => self.k = None,
            Param::Alpha => self.alpha = None,
            Param::Theta => self.theta = None,
            Param::Lambda => self.lambda = None,
            Param::Clusters => self.clusters.clear(),
            Param::Cluster => self.cluster = None,
            Param::Feature => self.feature = None,
            Param::FromRound => self.from_round = None,
            Param::Epochs => self.epochs = None,
            Param::Islands => self.islands = None,
            Param::Population => self.population = None,
            Param::OuterIterations => self.outer_iterations = None,
            Param::InnerIterations => self.inner_iterations = None,
            Param::MaxHidden => self.max_hidden = None,
        }
    }

    /// `self` with every parameter set in `other` replaced by `other`'s value.
    pub fn overlay(&self, other: &PlanParams) -> PlanParams {
        fn pick<T: Clone>(base: &Option<T>, new: &Option<T>) -> Option<T> {
            new.clone().or_else(|| base.clone())
        }
        fn pick_vec<T: Clone>(base: &[T], new: &[T]) -> Vec<T> {
            if new.is_empty() {
                base.to_vec()
            } else {
                new.to_vec()
            }
        }
        PlanParams {
            dataset: pick(&self.dataset, &other.dataset),
            nodes: pick_vec(&self.nodes, &other.nodes),
            date_from: pick(&self.date_from, &other.date_from),
            date_to: pick(&self.date_to, &other.date_to),
            k: pick(&self.k, &other.k),
            alpha: pick(&self.alpha, &other.alpha),
            theta: pick(&self.theta, &other.theta),
            lambda: pick(&self.lambda, &other.lambda),
            clusters: pick_vec(&self.clusters, &other.clusters),
            cluster: pick(&self.cluster, &other.cluster),
            feature: pick(&self.feature, &other.feature),
            from_round: pick(&self.from_round, &other.from_round),
            epochs: pick(&self.epochs, &other.epochs),
            islands: pick(&self.islands, &other.islands),
            population: pick(&self.population, &other.population),
            outer_iterations: pick(&self.outer_iterations, &other.outer_iterations),
            inner_iterations: pick(&self.inner_iterations, &other.inner_iterations),
            max_hidden: pick(&self.max_hidden, &other.max_hidden),
        }
    }
}

/// A parsed request: what to run, with which parameters, and how to show it. `then` chains a
/// follow-up step that may consume this step's output (cluster labels).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskPlan {
    pub intent: Intent,
    #[serde(default)]
    pub params: PlanParams,
    pub visualization: VisualizationKind,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub then: Option<Box<TaskPlan>>,
}

impl TaskPlan {
    pub fn new(intent: Intent, params: PlanParams, provenance: Provenance) -> Self {
        Self {
            intent,
            params,
            visualization: intent.default_visualization(),
            provenance,
            then: None,
        }
    }

    /// The steps in execution order.
    pub fn steps(&self) -> Vec<&TaskPlan> {
        let mut out = vec![self];
        let mut cur = self;
        while let Some(next) = &cur.then {
            out.push(next);
            cur = next;
        }
        out
    }

    /// Checks intent/visualization and intent/parameter compatibility and value ranges.
    pub fn validate(&self) -> Result<(), OrchestratorError> {
        for (i, step) in self.steps().into_iter().enumerate() {
            step.validate_step()
                .map_err(|m| OrchestratorError::InvalidPlan(format!("step {}: {m}", i + 1)))?;
            if step.provenance != self.provenance {
                return Err(OrchestratorError::InvalidPlan(
                    "all steps of a plan share one provenance".into(),
                ));
            }
        }
        Ok(())
    }

    fn validate_step(&self) -> Result<(), String> {
        let intent = self.intent;
        if !intent.visualizations().contains(&self.visualization) {
            return Err(format!(
                "{} cannot be shown as {}",
                intent.as_str(),
                self.visualization.as_str()
            ));
        }
        let p = &self.params;
        if let Some(bad) = p.present().into_iter().find(|&x| !intent.accepts(x)) {
            return Err(format!(
                "{} does not take {}",
                intent.as_str(),
                bad.as_str()
            ));
        }
        if matches!(intent, Intent::Predict | Intent::Hpo) && p.nodes.len() > 1 {
            return Err(format!("{} takes at most one node", intent.as_str()));
        }
        if p.nodes.iter().any(|n| n.trim().is_empty()) {
            return Err("node ids must be nonempty".into());
        }
        if p.dataset.as_deref().is_some_and(|d| d.trim().is_empty()) {
            return Err("dataset id must be nonempty".into());
        }
        if let (Some(a), Some(b)) = (p.date_from, p.date_to) {
            if a > b {
                return Err(format!("date range {a} .. {b} is reversed"));
            }
        }
        if let Some(k) = p.k {
            if !(2..=64).contains(&k) {
                return Err(format!("k = {k} outside 2..=64"));
            }
        }
        for (name, v) in [("alpha", p.alpha), ("theta", p.theta), ("lambda", p.lambda)] {
            if let Some(v) = v {
                if !(0.0..=1.0).contains(&v) {
                    return Err(format!("{name} = {v} outside [0, 1]"));
                }
            }
        }
        if !p.clusters.is_empty() {
            let distinct: BTreeSet<_> = p.clusters.iter().collect();
            if distinct.len() != p.clusters.len() || p.clusters.len() < 2 {
                return Err("clusters must list at least two distinct labels".into());
            }
        }
        if p.from_round == Some(0) {
            return Err("rounds are numbered from 1".into());
        }
        for (name, v) in [
            ("epochs", p.epochs),
            ("islands", p.islands),
            ("population", p.population),
            ("outer_iterations", p.outer_iterations),
            ("inner_iterations", p.inner_iterations),
        ] {
            if v == Some(0) {
                return Err(format!("{name} must be positive"));
            }
        }
        if let (Some(pop), Some(isl)) = (p.population, p.islands) {
            if pop % isl != 0 {
                return Err(format!(
                    "population {pop} is not divisible by {isl} islands"
                ));
            }
        }
        if let Some(h) = p.max_hidden {
            if h < 1 {
                return Err("max_hidden must be at least 1".into());
            }
        }
        Ok(())
    }
}
