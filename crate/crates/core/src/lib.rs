//! Spatiotemporal analytics for urban IoT sensor networks.
//!
//! The crate is organised around the agents of the platform:
//!
//! - [`temporal`]: attentional Grid LSTM forecaster (feature attention, 2-D grid
//!   recurrence, cross-attention decoder) with a hand-written backward pass.
//! - [`hpo`]: island-model genetic algorithm over binary-encoded hyperparameters.
//! - [`spatial`]: initial similarity graphs, single- and cross-graph heat
//!   diffusion similarity, spectral clustering and inter-cluster scoring.
//! - [`orchestrator`]: request parsing (LLM first, rule grammar fallback), plan
//!   execution against session-bound datasets, and visualization payloads.
//! - [`data`]: CSV loaders, synthetic generators and the file-backed store.
//! - [`numerics`]: dense matrices, the matrix exponential and evaluation metrics.

pub mod data;
pub mod hpo;
pub mod numerics;
pub mod orchestrator;
pub mod spatial;
pub mod temporal;
