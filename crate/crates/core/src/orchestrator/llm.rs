//! Chat-completions client and the prompt/response handling around it. Model output is
//! only ever used after strict parsing and plan validation.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::rules::{ParseContext, ParseOutcome};
use super::{Intent, PlanParams, Provenance, TaskPlan, VisualizationKind, VisualizationPayload};

pub const LLM_URL_ENV: &str = "CITYAGENT_LLM_URL";
pub const LLM_KEY_ENV: &str = "CITYAGENT_LLM_KEY";
pub const LLM_MODEL_ENV: &str = "CITYAGENT_LLM_MODEL";

pub const PLAN_PROMPT_VERSION: &str = "plan_request.v1";
pub const PLAN_PROMPT: &str = include_str!("../../prompts/plan_request.v1.txt");
pub const NARRATIVE_PROMPT_VERSION: &str = "narrative_polish.v1";
pub const NARRATIVE_PROMPT: &str = include_str!("../../prompts/narrative_polish.v1.txt");
pub const TASK_PLAN_SCHEMA: &str = include_str!("../../schemas/task_plan.schema.json");

/// Node ids listed in the prompt; longer lists are truncated.
const PROMPT_NODE_LIMIT: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmConfig {
    /// Full URL of an OpenAI-compatible chat-completions endpoint.
    pub url: String,
    pub key: Option<String>,
    pub model: String,
    pub timeout: Duration,
    /// Additional attempts after a timeout, transport failure or 5xx answer.
    pub retries: usize,
}

impl LlmConfig {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            key: None,
            model: "gpt-4o-mini".into(),
            timeout: Duration::from_secs(30),
            retries: 1,
        }
    }

    /// Reads the endpoint, key and model from the environment; `None` when no URL is set.
    pub fn from_env() -> Option<Self> {
        let url = std::env::var(LLM_URL_ENV)
            .ok()
            .filter(|u| !u.trim().is_empty())?;
        let mut cfg = Self::new(url);
        cfg.key = std::env::var(LLM_KEY_ENV).ok().filter(|k| !k.is_empty());
        if let Ok(model) = std::env::var(LLM_MODEL_ENV) {
            if !model.is_empty() {
                cfg.model = model;
            }
        }
        Some(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LlmError {
    #[error("no language model endpoint is configured")]
    Unavailable,
    #[error("language model request timed out")]
    Timeout,
    #[error("language model answered with HTTP {0}")]
    Status(u16),
    #[error("language model transport error: {0}")]
    Transport(String),
    #[error("malformed language model answer: {0}")]
    Malformed(String),
}

impl LlmError {
    fn retryable(&self) -> bool {
        match self {
            LlmError::Timeout | LlmError::Transport(_) => true,
            LlmError::Status(code) => *code >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmPrompt {
    pub system: String,
    pub user: String,
}

#[derive(Deserialize)]
struct Completion {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: String,
}

/// One completion. Without a configuration this fails with [`LlmError::Unavailable`] before
/// any network activity.
pub fn llm_complete(cfg: Option<&LlmConfig>, prompt: &LlmPrompt) -> Result<String, LlmError> {
    let cfg = cfg.ok_or(LlmError::Unavailable)?;
    let body = json!({
        "model": cfg.model,
        "temperature": 0,
        "messages": [
            {"role": "system", "content": prompt.system},
            {"role": "user", "content": prompt.user},
        ],
    })
    .to_string();
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(cfg.timeout))
        .build()
        .into();
    let mut attempt = 0;
    loop {
        match send(&agent, cfg, &body) {
            Err(e) if e.retryable() && attempt < cfg.retries => attempt += 1,
            other => return other,
        }
    }
}

fn send(agent: &ureq::Agent, cfg: &LlmConfig, body: &str) -> Result<String, LlmError> {
    let mut req = agent
        .post(&cfg.url)
        .header("Content-Type", "application/json");
    if let Some(key) = &cfg.key {
        req = req.header("Authorization", format!("Bearer {key}"));
    }
    let mut resp = req.send(body).map_err(|e| match e {
        ureq::Error::StatusCode(code) => LlmError::Status(code),
        ureq::Error::Timeout(_) => LlmError::Timeout,
        ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => LlmError::Timeout,
        other => LlmError::Transport(other.to_string()),
    })?;
    let text = resp
        .body_mut()
        .read_to_string()
        .map_err(|e| LlmError::Transport(e.to_string()))?;
    let completion: Completion =
        serde_json::from_str(&text).map_err(|e| LlmError::Malformed(e.to_string()))?;
    completion
        .choices
        .into_iter()
        .next()
        .map(|c| c.message.content)
        .ok_or_else(|| LlmError::Malformed("no choices".into()))
}

/// The planning prompt: versioned template plus the session context and the request.
pub fn plan_prompt(text: &str, ctx: &ParseContext) -> LlmPrompt {
    let mut nodes: Vec<&str> = ctx
        .node_ids
        .iter()
        .take(PROMPT_NODE_LIMIT)
        .map(String::as_str)
        .collect();
    if ctx.node_ids.len() > PROMPT_NODE_LIMIT {
        nodes.push("...");
    }
    let rounds = ctx
        .rounds
        .iter()
        .map(|r| {
            let intents: Vec<&str> = r.intents.iter().map(|i| i.as_str()).collect();
            format!("round {}: {}", r.index, intents.join(", "))
        })
        .collect::<Vec<_>>()
        .join("\n");
    let previous = ctx
        .previous
        .as_ref()
        .map(|p| serde_json::to_string(p).expect("plans serialize"))
        .unwrap_or_else(|| "none".into());
    let system = PLAN_PROMPT
        .replace("{{schema}}", TASK_PLAN_SCHEMA.trim())
        .replace("{{datasets}}", &ctx.datasets.join(", "))
        .replace("{{nodes}}", &nodes.join(", "))
        .replace("{{features}}", &ctx.features.join(", "))
        .replace(
            "{{rounds}}",
            if rounds.is_empty() { "none" } else { &rounds },
        )
        .replace("{{previous}}", &previous);
    LlmPrompt {
        system,
        user: text.to_string(),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LlmPlan {
    intent: Intent,
    #[serde(default)]
    params: PlanParams,
    visualization: Option<VisualizationKind>,
    #[serde(default)]
    then: Option<Box<LlmPlan>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LlmClarification {
    clarification: String,
}

impl LlmPlan {
    fn into_plan(self) -> TaskPlan {
        TaskPlan {
            intent: self.intent,
            params: self.params,
            visualization: self
                .visualization
                .unwrap_or_else(|| self.intent.default_visualization()),
            provenance: Provenance::Llm,
            then: self.then.map(|t| Box::new(t.into_plan())),
        }
    }
}

/// The JSON object in a model answer, tolerating a surrounding code fence.
fn json_object(content: &str) -> Result<&str, LlmError> {
    let start = content.find('{');
    let end = content.rfind('}');
    match (start, end) {
        (Some(s), Some(e)) if s < e => Ok(&content[s..=e]),
        _ => Err(LlmError::Malformed("no JSON object in the answer".into())),
    }
}

/// Turns a model answer into a validated plan or clarification. Any deviation from the plan
/// schema, an invalid plan or an unbound dataset is [`LlmError::Malformed`].
pub fn plan_from_completion(content: &str, ctx: &ParseContext) -> Result<ParseOutcome, LlmError> {
    let obj = json_object(content)?;
    if let Ok(c) = serde_json::from_str::<LlmClarification>(obj) {
        if c.clarification.trim().is_empty() {
            return Err(LlmError::Malformed("empty clarification".into()));
        }
        return Ok(ParseOutcome::Clarification {
            message: c.clarification,
        });
    }
    let raw: LlmPlan = serde_json::from_str(obj).map_err(|e| LlmError::Malformed(e.to_string()))?;
    let mut plan = raw.into_plan();
    if plan.params.dataset.is_none() {
        plan.params.dataset = ctx.datasets.last().cloned();
    }
    for step in plan.steps() {
        if let Some(d) = &step.params.dataset {
            if !ctx.datasets.contains(d) {
                return Err(LlmError::Malformed(format!("dataset {d} is not bound")));
            }
        }
        if let Some(r) = step.params.from_round {
            if !ctx.rounds.iter().any(|x| x.index == r) {
                return Err(LlmError::Malformed(format!("round {r} does not exist")));
            }
        }
    }
    plan.validate()
        .map_err(|e| LlmError::Malformed(e.to_string()))?;
    Ok(ParseOutcome::Plan { plan })
}

/// Rewrites each narrative through the model. A payload keeps its template narrative when
/// the call fails or returns nothing.
pub fn polish_narratives(cfg: Option<&LlmConfig>, payloads: &mut [VisualizationPayload]) {
    if cfg.is_none() {
        return;
    }
    for p in payloads {
        let prompt = LlmPrompt {
            system: NARRATIVE_PROMPT.replace("{{kind}}", p.kind().as_str()),
            user: p.narrative.clone(),
        };
        if let Ok(text) = llm_complete(cfg, &prompt) {
            let text = text.trim();
            if !text.is_empty() {
                p.narrative_template = Some(std::mem::replace(&mut p.narrative, text.to_string()));
            }
        }
    }
}
