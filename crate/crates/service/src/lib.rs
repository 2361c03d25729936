//! HTTP API and command-line interface over the analytics pipeline.
//!
//! Both surfaces are thin shells: every analysis goes through [`run_intent`] or a session
//! round, which call the orchestrator directly, so results are byte-identical to library
//! calls with the same seed.

pub mod api;
pub mod cli;
mod datasets;
mod error;
mod jobs;

pub use api::{
    router, serve, AppState, Health, RoundRequest, ServiceConfig, SessionRequest, SharedState,
};
pub use cli::run_cli;
pub use datasets::{
    bundle_from_csv, bundle_from_synth, check_dataset_id, load_bundle, load_catalog, save_bundle,
    DatasetUpload, SynthRequest, DATASET_KIND,
};
pub use error::{ErrorBody, ServiceError};
pub use jobs::{plan_for, run_intent, IntentRun, JobRecord, JobRequest, JobStatus, StepTiming};

/// JSON schema of the request bodies accepted by the HTTP API.
pub const API_SCHEMA: &str = include_str!("../schemas/api_requests.schema.json");
