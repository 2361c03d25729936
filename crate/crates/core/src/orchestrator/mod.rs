//! Orchestrator: turns requests into typed task plans, runs them on the agents and renders
//! visualization payloads.
//!
//! Requests go to the language model when one is configured and fall back to a keyword
//! grammar otherwise; every plan records which path produced it. Sessions keep an
//! append-only list of rounds so later requests can refer to earlier outputs.

mod catalog;
mod execute;
mod llm;
mod plan;
mod render;
mod rules;
mod session;

pub use catalog::{Catalog, DatasetBundle, DatasetSummary, SeriesSummary};
pub use execute::{
    execute_plan, label_set, Agent, ClusterOutput, CompareOutput, CountSummary, HpoOutput,
    InspectOutput, IntentOutput, LocateOutput, NamedSeries, NodePoint, PredictOutput,
    SimilarityOutput, StepResult, WeightedEdge, AUTO_K, HPO_EPOCHS, HPO_MAX_HIDDEN,
};
pub use llm::{
    llm_complete, plan_from_completion, plan_prompt, polish_narratives, LlmConfig, LlmError,
    LlmPrompt, LLM_KEY_ENV, LLM_MODEL_ENV, LLM_URL_ENV, NARRATIVE_PROMPT, NARRATIVE_PROMPT_VERSION,
    PLAN_PROMPT, PLAN_PROMPT_VERSION, TASK_PLAN_SCHEMA,
};
pub use plan::{Intent, Param, PlanParams, Provenance, TaskPlan, VisualizationKind};
pub use render::{
    render_output, render_results, Axes, Axis, ClusterSummary, GraphEdge, GraphNode, LineSeries,
    MapPoint, ParallelLine, PayloadBody, Rendering, VisualizationPayload, PAYLOAD_SCHEMA_VERSION,
    SIGNIFICANT_GAP,
};
pub use rules::{parse_rules, ParseContext, ParseOutcome, RoundInfo};
pub use session::{apply_feedback, parse_request, ParseResult, Round, RoundOptions, Session};

/// JSON schema of [`VisualizationPayload`].
pub const PAYLOAD_SCHEMA: &str = include_str!("../../schemas/visualization_payload.schema.json");

use crate::data::DataError;
use crate::hpo::HpoError;
use crate::numerics::NumericsError;
use crate::spatial::SpatialError;
use crate::temporal::TemporalError;

#[derive(Debug, thiserror::Error)]
pub enum OrchestratorError {
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("dataset {0} is not bound to this session")]
    UnboundDataset(String),
    #[error("dataset {0} is not loaded")]
    UnknownDataset(String),
    #[error("round {0} does not exist")]
    UnknownRound(usize),
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("{0}")]
    MissingInput(String),
    #[error("payload violates its schema: {0}")]
    Payload(String),
    #[error(transparent)]
    Spatial(#[from] SpatialError),
    #[error(transparent)]
    Temporal(#[from] TemporalError),
    #[error(transparent)]
    Hpo(#[from] HpoError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}
