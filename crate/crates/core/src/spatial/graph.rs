use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::SpatialError;
use crate::numerics::{cosine_sim, Matrix};

const EARTH_RADIUS_M: f64 = 6_371_008.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorNode {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
    /// Representation vector.
    pub features: Vec<f64>,
    #[serde(default)]
    pub streets: BTreeSet<String>,
}

impl SensorNode {
    pub fn new(id: impl Into<String>, lat: f64, lon: f64, features: Vec<f64>) -> Self {
        Self {
            id: id.into(),
            lat,
            lon,
            features,
            streets: BTreeSet::new(),
        }
    }

    pub fn with_streets<I, S>(mut self, streets: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.streets = streets.into_iter().map(Into::into).collect();
        self
    }

    fn validate(&self) -> Result<(), SpatialError> {
        if !self.lat.is_finite() || !self.lon.is_finite() {
            return Err(SpatialError::Invalid(format!(
                "node {} has non-finite coordinates",
                self.id
            )));
        }
        if self.features.is_empty() || self.features.iter().any(|f| !f.is_finite()) {
            return Err(SpatialError::Invalid(format!(
                "node {} needs a nonempty finite feature vector",
                self.id
            )));
        }
        Ok(())
    }
}

/// Great-circle distance in metres.
pub fn haversine_m(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * a.sqrt().min(1.0).asin()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityKind {
    Initial,
    Diffused,
    CrossGraph,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub values: Matrix,
    pub kind: SimilarityKind,
}

impl SimilarityMatrix {
    pub fn new(values: Matrix, kind: SimilarityKind) -> Result<Self, SpatialError> {
        values.check_finite().map_err(SpatialError::Numerics)?;
        Ok(Self { values, kind })
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }
}

/// Blend of normalized geographic closeness and feature cosine similarity:
/// `α·dis(i,j) + (1−α)·cos(X_i, X_j)` with `dis = 1 − (g − g_min)/(g_max − g_min)`.
///
/// `g_min` and `g_max` range over all ordered pairs including `i = j`, so `g_min = 0` and
/// every node is at closeness 1 to itself. Co-located node sets give `dis ≡ 1`.
pub fn initial_similarity(
    nodes: &[SensorNode],
    alpha: f64,
) -> Result<SimilarityMatrix, SpatialError> {
    if nodes.len() < 2 {
        return Err(SpatialError::Invalid(
            "initial similarity needs at least 2 nodes".into(),
        ));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(SpatialError::Invalid(format!(
            "blend alpha {alpha} outside [0,1]"
        )));
    }
    for n in nodes {
        n.validate()?;
    }
    let dim = nodes[0].features.len();
    if nodes.iter().any(|n| n.features.len() != dim) {
        return Err(SpatialError::Invalid(
            "feature vectors differ in length".into(),
        ));
    }
    let n = nodes.len();
    let g = Matrix::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            haversine_m(nodes[i].lat, nodes[i].lon, nodes[j].lat, nodes[j].lon)
        }
    });
    let g_max = g.as_slice().iter().copied().fold(0.0, f64::max);
    let g_min = 0.0;
    let values = Matrix::from_fn(n, n, |i, j| {
        let dis = if g_max > g_min {
            1.0 - (g[(i, j)] - g_min) / (g_max - g_min)
        } else {
            1.0
        };
        let cos = if i == j {
            1.0
        } else {
            cosine_sim(&nodes[i].features, &nodes[j].features).unwrap_or(0.0)
        };
        alpha * dis + (1.0 - alpha) * cos
    });
    SimilarityMatrix::new(values, SimilarityKind::Initial)
}

/// Weighted directed graph over sensor nodes.
///
/// `out_degrees[x] = Σ_y A[x,y]`. `edge_count` counts nonzero adjacency entries (self-loops
/// included), so for an unweighted graph it equals the sum of out-degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorGraph {
    pub nodes: Vec<SensorNode>,
    pub adjacency: Matrix,
    pub out_degrees: Vec<f64>,
    pub edge_count: usize,
}

impl SensorGraph {
    /// Validates the adjacency and gives every node without outgoing weight a unit self-loop.
    pub fn new(nodes: Vec<SensorNode>, mut adjacency: Matrix) -> Result<Self, SpatialError> {
        let n = nodes.len();
        if n == 0 {
            return Err(SpatialError::Invalid(
                "graph needs at least one node".into(),
            ));
        }
        if adjacency.rows() != n || adjacency.cols() != n {
            return Err(SpatialError::Invalid(format!(
                "adjacency is {}x{} for {n} nodes",
                adjacency.rows(),
                adjacency.cols()
            )));
        }
        adjacency.check_finite().map_err(SpatialError::Numerics)?;
        if adjacency.as_slice().iter().any(|&w| w < 0.0) {
            return Err(SpatialError::Invalid(
                "adjacency weights must be nonnegative".into(),
            ));
        }
        for x in 0..n {
            if adjacency.row(x).iter().sum::<f64>() <= 0.0 {
                adjacency[(x, x)] = 1.0;
            }
        }
        let out_degrees = (0..n).map(|x| adjacency.row(x).iter().sum()).collect();
        let edge_count = adjacency.as_slice().iter().filter(|&&w| w != 0.0).count();
        Ok(Self {
            nodes,
            adjacency,
            out_degrees,
            edge_count,
        })
    }

    /// Graph with placeholder nodes `n0, n1, ...`; handy when only the structure matters.
    pub fn from_adjacency(adjacency: Matrix) -> Result<Self, SpatialError> {
        let nodes = (0..adjacency.rows())
            .map(|i| SensorNode::new(format!("n{i}"), 0.0, 0.0, vec![1.0]))
            .collect();
        Self::new(nodes, adjacency)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node_ids(&self) -> Vec<String> {
        self.nodes.iter().map(|n| n.id.clone()).collect()
    }
}

/// Directed k-nearest-neighbour graph: each node links to its `k` most similar other nodes
/// with the similarity as weight. Ties break toward the lower index. Nonpositive
/// similarities never form edges.
pub fn build_graph(
    nodes: &[SensorNode],
    sim: &SimilarityMatrix,
    k: usize,
) -> Result<SensorGraph, SpatialError> {
    let n = sim.len();
    if sim.values.cols() != n || nodes.len() != n {
        return Err(SpatialError::Invalid(format!(
            "similarity is {}x{} for {} nodes",
            sim.values.rows(),
            sim.values.cols(),
            nodes.len()
        )));
    }
    if k >= n {
        return Err(SpatialError::Invalid(format!(
            "k = {k} must be below the node count {n}"
        )));
    }
    let mut adj = Matrix::zeros(n, n);
    for x in 0..n {
        let mut others: Vec<usize> = (0..n).filter(|&y| y != x).collect();
        others.sort_by(|&a, &b| {
            sim.values[(x, b)]
                .total_cmp(&sim.values[(x, a)])
                .then(a.cmp(&b))
        });
        for &y in others.iter().take(k) {
            let w = sim.values[(x, y)];
            if w > 0.0 {
                adj[(x, y)] = w;
            }
        }
    }
    SensorGraph::new(nodes.to_vec(), adj)
}
