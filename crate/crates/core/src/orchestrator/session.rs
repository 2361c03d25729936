use serde::{Deserialize, Serialize};

use super::llm::{llm_complete, plan_from_completion, plan_prompt, polish_narratives, LlmConfig};
use super::rules::{parse_rules, ParseContext, ParseOutcome, RoundInfo};
use super::{
    execute_plan, render_results, Catalog, OrchestratorError, StepResult, TaskPlan,
    VisualizationPayload,
};

/// One user turn: the request text and what came of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Round {
    /// 1-based position in the session.
    pub index: usize,
    pub text: String,
    #[serde(flatten)]
    pub outcome: ParseOutcome,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub results: Vec<StepResult>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub payloads: Vec<VisualizationPayload>,
    /// Explanations for steps that had nothing to chart.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notices: Vec<String>,
    /// Why the language model answer was not used, when one was requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub llm_fallback: Option<String>,
}

impl Round {
    pub fn plan(&self) -> Option<&TaskPlan> {
        self.outcome.plan()
    }
}

/// A conversation: datasets it may touch, its seed, and its rounds (append-only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub seed: u64,
    pub datasets: Vec<String>,
    pub rounds: Vec<Round>,
}

/// A parse together with the reason the language model was not used, if it was tried.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParseResult {
    pub outcome: ParseOutcome,
    pub llm_fallback: Option<String>,
}

/// Options for running a round.
#[derive(Debug, Clone, Default)]
pub struct RoundOptions {
    pub llm: Option<LlmConfig>,
    /// Threads for the parallel parts of execution; results do not depend on it.
    pub workers: usize,
    /// Rewrite template narratives through the language model.
    pub polish_narratives: bool,
}

impl Session {
    pub fn new(id: impl Into<String>, seed: u64) -> Self {
        Self {
            id: id.into(),
            seed,
            datasets: Vec::new(),
            rounds: Vec::new(),
        }
    }

    /// Binds a dataset; binding twice is a no-op.
    pub fn bind_dataset(&mut self, id: impl Into<String>) {
        let id = id.into();
        if !self.datasets.contains(&id) {
            self.datasets.push(id);
        }
    }

    pub fn default_dataset(&self) -> Result<&str, OrchestratorError> {
        self.datasets.last().map(String::as_str).ok_or_else(|| {
            OrchestratorError::MissingInput("no dataset is bound to the session".into())
        })
    }

    /// Round by 1-based index.
    pub fn round(&self, index: usize) -> Result<&Round, OrchestratorError> {
        index
            .checked_sub(1)
            .and_then(|i| self.rounds.get(i))
            .ok_or(OrchestratorError::UnknownRound(index))
    }

    /// What the parser may know: bound datasets, their node ids and features, and the rounds.
    pub fn parse_context(&self, catalog: &Catalog) -> ParseContext {
        let mut ctx = ParseContext {
            datasets: self.datasets.clone(),
            ..ParseContext::default()
        };
        for id in &self.datasets {
            if let Some(b) = catalog.get(id) {
                for n in b.node_ids() {
                    if !ctx.node_ids.contains(&n) {
                        ctx.node_ids.push(n);
                    }
                }
                for f in b.feature_names() {
                    if !ctx.features.contains(&f) {
                        ctx.features.push(f);
                    }
                }
            }
        }
        for r in &self.rounds {
            if r.plan().is_some() {
                ctx.rounds.push(RoundInfo {
                    index: r.index,
                    intents: r.results.iter().map(|s| s.output.intent()).collect(),
                });
                ctx.previous = r.plan().cloned();
            }
        }
        ctx
    }

    /// Parses, executes and renders one request and appends it as a round. The first round
    /// goes through [`parse_request`], later ones through [`apply_feedback`].
    pub fn run_round(
        &mut self,
        text: &str,
        catalog: &Catalog,
        opts: &RoundOptions,
    ) -> Result<&Round, OrchestratorError> {
        let parsed = if self.rounds.is_empty() {
            parse_request(text, &self.parse_context(catalog), opts.llm.as_ref())
        } else {
            apply_feedback(self, text, catalog, opts.llm.as_ref())?
        };
        let mut round = Round {
            index: self.rounds.len() + 1,
            text: text.to_string(),
            outcome: parsed.outcome,
            results: Vec::new(),
            payloads: Vec::new(),
            notices: Vec::new(),
            llm_fallback: parsed.llm_fallback,
        };
        if let Some(plan) = round.plan().cloned() {
            round.results = execute_plan(&plan, self, catalog, opts.workers.max(1))?;
            let rendering = render_results(&plan, &round.results)?;
            round.payloads = rendering.payloads;
            round.notices = rendering.notices;
            if opts.polish_narratives {
                polish_narratives(opts.llm.as_ref(), &mut round.payloads);
            }
        }
        self.rounds.push(round);
        Ok(self.rounds.last().expect("just pushed"))
    }
}

/// Language model first, keyword grammar when the model is unavailable or its answer does
/// not validate. Empty or unintelligible text yields a clarification, never an error.
pub fn parse_request(text: &str, ctx: &ParseContext, llm: Option<&LlmConfig>) -> ParseResult {
    let mut llm_fallback = None;
    if llm.is_some() && !text.trim().is_empty() {
        let answer =
            llm_complete(llm, &plan_prompt(text, ctx)).and_then(|c| plan_from_completion(&c, ctx));
        match answer {
            Ok(outcome) => {
                return ParseResult {
                    outcome,
                    llm_fallback: None,
                }
            }
            Err(e) => llm_fallback = Some(e.to_string()),
        }
    }
    ParseResult {
        outcome: parse_rules(text, ctx),
        llm_fallback,
    }
}

/// Revises the plan in light of a follow-up message. The previous plan and round outputs are
/// part of the context, so "now cluster them" reuses the earlier similarity matrix and a
/// message naming only new slots edits the previous plan. Referencing a round that does not
/// exist is an error.
pub fn apply_feedback(
    session: &Session,
    text: &str,
    catalog: &Catalog,
    llm: Option<&LlmConfig>,
) -> Result<ParseResult, OrchestratorError> {
    if session.rounds.is_empty() {
        return Err(OrchestratorError::MissingInput(
            "there is no earlier round to revise".into(),
        ));
    }
    let ctx = session.parse_context(catalog);
    let parsed = parse_request(text, &ctx, llm);
    if let Some(plan) = parsed.outcome.plan() {
        for step in plan.steps() {
            if let Some(r) = step.params.from_round {
                session.round(r)?;
            }
        }
    }
    Ok(parsed)
}
