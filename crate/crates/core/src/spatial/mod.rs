//! Spatial agent: similarity graphs, heat-diffusion similarity and spectral clustering.

mod clusters;
mod diffusion;
mod export;
mod graph;
mod spectral;

pub use clusters::{
    build_cluster_graphs, inter_cluster_matrix, inter_cluster_matrix_with_workers,
    inter_cluster_similarity, raw_pair_similarity, ClusterGraph, ClusterGraphs,
};
pub use diffusion::{
    cosimheat_cross, cosimheat_single, initial_temperature_terms, left_generator, right_generator,
    DiffusionConfig,
};
pub use export::{similarity_csv_string, write_similarity_csv};
pub use graph::{
    build_graph, haversine_m, initial_similarity, SensorGraph, SensorNode, SimilarityKind,
    SimilarityMatrix,
};
pub use spectral::{
    canonical_labels, evaluate_cluster_counts, kmeans, laplacian_spectrum, spectral_cluster,
    spectral_embedding, ClusterCountRow, ClusterCountTable, DB_SLACK, EIGENGAP_TOL,
    KMEANS_RESTARTS,
};

use crate::numerics::NumericsError;

/// Default neighbour count of the k-NN graph.
pub const DEFAULT_KNN: usize = 10;
/// Default blend between geographic and feature similarity.
pub const DEFAULT_BLEND: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SpatialError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("node {0} has zero out-degree")]
    ZeroOutDegree(String),
    #[error("no known node-pair relations (S0 is empty) while theta < 1")]
    EmptyRelations,
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}
