use cityagent_core::orchestrator::{
    execute_plan, render_results, Agent, Catalog, Intent, IntentOutput, PlanParams, Provenance,
    Session, TaskPlan, VisualizationKind, VisualizationPayload,
};
use serde::{Deserialize, Serialize};

use crate::{ErrorBody, ServiceError};

/// One analysis outside any conversation, e.g. `POST /jobs/cluster` or `cityagent cluster`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobRequest {
    pub dataset: String,
    #[serde(default)]
    pub params: PlanParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visualization: Option<VisualizationKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTiming {
    pub agent: Agent,
    pub elapsed_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fitness_evaluations: Option<usize>,
}

/// What an analysis produced. `outputs` and `payloads` are deterministic for the plan, seed
/// and data; `timings` are not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentRun {
    pub plan: TaskPlan,
    pub seed: u64,
    pub outputs: Vec<IntentOutput>,
    pub payloads: Vec<VisualizationPayload>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notices: Vec<String>,
    pub timings: Vec<StepTiming>,
}

/// The single-step plan a job request stands for.
pub fn plan_for(intent: Intent, req: &JobRequest) -> Result<TaskPlan, ServiceError> {
    match &req.params.dataset {
        Some(d) if d != &req.dataset => {
            return Err(ServiceError::Validation(format!(
                "params.dataset {d} disagrees with dataset {}",
                req.dataset
            )))
        }
        _ => {}
    }
    if req.params.from_round.is_some() {
        return Err(ServiceError::Validation(
            "from_round refers to a conversation; send the request as a session round".into(),
        ));
    }
    let mut plan = TaskPlan::new(
        intent,
        PlanParams {
            dataset: Some(req.dataset.clone()),
            ..req.params.clone()
        },
        Provenance::Rules,
    );
    if let Some(v) = req.visualization {
        plan.visualization = v;
    }
    plan.validate()?;
    Ok(plan)
}

/// Executes and renders one job with the orchestrator, as a session bound to the single
/// requested dataset.
pub fn run_intent(
    catalog: &Catalog,
    intent: Intent,
    req: &JobRequest,
    default_seed: u64,
    workers: usize,
) -> Result<IntentRun, ServiceError> {
    let plan = plan_for(intent, req)?;
    let seed = req.seed.unwrap_or(default_seed);
    let mut session = Session::new("job", seed);
    session.bind_dataset(req.dataset.clone());
    let steps = execute_plan(&plan, &session, catalog, workers)?;
    let rendering = render_results(&plan, &steps)?;
    Ok(IntentRun {
        plan,
        seed,
        timings: steps
            .iter()
            .map(|s| StepTiming {
                agent: s.agent,
                elapsed_ms: s.elapsed_ms,
                fitness_evaluations: s.fitness_evaluations,
            })
            .collect(),
        outputs: steps.into_iter().map(|s| s.output).collect(),
        payloads: rendering.payloads,
        notices: rendering.notices,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Succeeded,
    Failed,
}

impl JobStatus {
    pub fn finished(self) -> bool {
        matches!(self, JobStatus::Succeeded | JobStatus::Failed)
    }
}

/// A job as reported by `GET /jobs/{id}`; immutable once finished.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub id: String,
    pub intent: Intent,
    pub status: JobStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<IntentRun>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
}
