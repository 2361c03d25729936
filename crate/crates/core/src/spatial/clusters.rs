//! Street-adjacency graphs per cluster and cluster-to-cluster similarity.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{cosimheat_cross, DiffusionConfig, SensorGraph, SensorNode, SpatialError};
use crate::data::StreetTable;
use crate::numerics::{cosine_sim, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterGraph {
    pub label: usize,
    /// Positions of the members in the original node list.
    pub members: Vec<usize>,
    pub graph: SensorGraph,
}

/// Per-cluster graphs plus the known-relation matrices between every ordered pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterGraphs {
    pub clusters: Vec<ClusterGraph>,
    /// `relations[i][j]` is `|C_i| × |C_j|`: cosine similarity where two nodes share a
    /// street, else 0. On the diagonal blocks every node is also related to itself with 1.
    pub relations: Vec<Vec<Matrix>>,
}

fn related(a: &BTreeSet<String>, b: &BTreeSet<String>) -> bool {
    a.intersection(b).next().is_some()
}

fn weight(a: &SensorNode, b: &SensorNode) -> f64 {
    cosine_sim(&a.features, &b.features).unwrap_or(0.0).max(0.0)
}

/// Builds one graph per label: directed edges both ways between members sharing a street,
/// weighted by feature cosine similarity. Nodes absent from `streets` are street-less and end
/// up with only the repair self-loop.
pub fn build_cluster_graphs(
    nodes: &[SensorNode],
    labels: &[usize],
    streets: &StreetTable,
) -> Result<ClusterGraphs, SpatialError> {
    if nodes.len() != labels.len() {
        return Err(SpatialError::Invalid(format!(
            "{} labels for {} nodes",
            labels.len(),
            nodes.len()
        )));
    }
    if nodes.is_empty() {
        return Err(SpatialError::Invalid("no nodes to group".into()));
    }
    let empty = BTreeSet::new();
    let street_of = |i: usize| streets.get(&nodes[i].id).unwrap_or(&empty);
    let distinct: BTreeSet<usize> = labels.iter().copied().collect();
    let mut clusters = Vec::with_capacity(distinct.len());
    for &label in &distinct {
        let members: Vec<usize> = (0..nodes.len()).filter(|&i| labels[i] == label).collect();
        let m = members.len();
        let adj = Matrix::from_fn(m, m, |a, b| {
            let (x, y) = (members[a], members[b]);
            if x != y && related(street_of(x), street_of(y)) {
                weight(&nodes[x], &nodes[y])
            } else {
                0.0
            }
        });
        let graph = SensorGraph::new(members.iter().map(|&i| nodes[i].clone()).collect(), adj)?;
        clusters.push(ClusterGraph {
            label,
            members,
            graph,
        });
    }
    let relations = clusters
        .iter()
        .map(|ci| {
            clusters
                .iter()
                .map(|cj| {
                    Matrix::from_fn(ci.members.len(), cj.members.len(), |a, b| {
                        let (x, y) = (ci.members[a], cj.members[b]);
                        if x == y {
                            1.0
                        } else if related(street_of(x), street_of(y)) {
                            weight(&nodes[x], &nodes[y])
                        } else {
                            0.0
                        }
                    })
                })
                .collect()
        })
        .collect();
    Ok(ClusterGraphs {
        clusters,
        relations,
    })
}

/// `Σ cosimheat_cross(G_i, G_j)` with the given relations. When no relation is known the
/// diffusion runs with θ = 1 and the result is weighted by the configured θ, which amounts
/// to dropping the empty relation term from the initial temperature.
pub fn raw_pair_similarity(
    gi: &SensorGraph,
    gj: &SensorGraph,
    relations: &Matrix,
    cfg: &DiffusionConfig,
) -> Result<f64, SpatialError> {
    let has_relations = relations.as_slice().iter().any(|&v| v != 0.0);
    if has_relations || cfg.theta >= 1.0 {
        let c = DiffusionConfig {
            s0: Some(relations.clone()),
            ..cfg.clone()
        };
        return Ok(cosimheat_cross(gi, gj, &c)?.values.sum());
    }
    let c = DiffusionConfig {
        theta: 1.0,
        s0: Some(relations.clone()),
        ..cfg.clone()
    };
    Ok(cfg.theta * cosimheat_cross(gi, gj, &c)?.values.sum())
}

/// Normalized score `min(1, raw(i,j)/√(raw(i,i)·raw(j,j)))`; exactly 1 on the diagonal. The
/// ratio alone can exceed 1 when two clusters share more strongly related streets than either
/// shares internally, hence the cap.
pub fn inter_cluster_similarity(
    graphs: &ClusterGraphs,
    i: usize,
    j: usize,
    cfg: &DiffusionConfig,
) -> Result<f64, SpatialError> {
    let n = graphs.clusters.len();
    if i >= n || j >= n {
        return Err(SpatialError::Invalid(format!(
            "cluster index out of range ({i}, {j}) of {n}"
        )));
    }
    if i == j {
        self_raw(graphs, i, cfg)?;
        return Ok(1.0);
    }
    let (i, j) = (i.min(j), i.max(j));
    let raw = raw_pair_similarity(
        &graphs.clusters[i].graph,
        &graphs.clusters[j].graph,
        &graphs.relations[i][j],
        cfg,
    )?;
    Ok((raw / (self_raw(graphs, i, cfg)? * self_raw(graphs, j, cfg)?).sqrt()).min(1.0))
}

fn self_raw(graphs: &ClusterGraphs, i: usize, cfg: &DiffusionConfig) -> Result<f64, SpatialError> {
    let g = &graphs.clusters[i].graph;
    let raw = raw_pair_similarity(g, g, &graphs.relations[i][i], cfg)?;
    if !(raw > 0.0) {
        return Err(SpatialError::Invalid(format!(
            "cluster {} has nonpositive self-similarity",
            graphs.clusters[i].label
        )));
    }
    Ok(raw)
}

/// All pairwise scores, clusters in label order.
pub fn inter_cluster_matrix(
    graphs: &ClusterGraphs,
    cfg: &DiffusionConfig,
) -> Result<Matrix, SpatialError> {
    inter_cluster_matrix_with_workers(graphs, cfg, 1)
}

/// [`inter_cluster_matrix`] with the pair diffusions spread over `workers` threads. Every
/// entry is computed independently, so the result does not depend on `workers`. Pairs are
/// evaluated once with `i <= j` and mirrored, which makes the matrix exactly symmetric.
pub fn inter_cluster_matrix_with_workers(
    graphs: &ClusterGraphs,
    cfg: &DiffusionConfig,
    workers: usize,
) -> Result<Matrix, SpatialError> {
    let n = graphs.clusters.len();
    let jobs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    let raw_of = |&(i, j): &(usize, usize)| {
        raw_pair_similarity(
            &graphs.clusters[i].graph,
            &graphs.clusters[j].graph,
            &graphs.relations[i][j],
            cfg,
        )
    };
    let workers = workers.clamp(1, jobs.len().max(1));
    let raws: Vec<Result<f64, SpatialError>> = if workers == 1 {
        jobs.iter().map(raw_of).collect()
    } else {
        let chunk = jobs.len().div_ceil(workers);
        std::thread::scope(|scope| {
            let handles: Vec<_> = jobs
                .chunks(chunk)
                .map(|part| scope.spawn(move || part.iter().map(raw_of).collect::<Vec<_>>()))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("pair diffusion worker panicked"))
                .collect()
        })
    };
    let mut raw = Matrix::zeros(n, n);
    for (&(i, j), r) in jobs.iter().zip(raws) {
        raw[(i, j)] = r?;
        raw[(j, i)] = raw[(i, j)];
    }
    for i in 0..n {
        if !(raw[(i, i)] > 0.0) {
            return Err(SpatialError::Invalid(format!(
                "cluster {} has nonpositive self-similarity",
                graphs.clusters[i].label
            )));
        }
    }
    let mut out = Matrix::identity(n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                out[(i, j)] = (raw[(i, j)] / (raw[(i, i)] * raw[(j, j)]).sqrt()).min(1.0);
            }
        }
    }
    Ok(out)
}
