//! Keyword slot grammar used when no language model is configured or its answer is unusable.

use std::sync::LazyLock;

use chrono::NaiveDate;
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{Intent, PlanParams, Provenance, TaskPlan, VisualizationKind};

/// What the parser may know about the session when reading a request.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParseContext {
    /// Bound dataset ids; the last one is the default.
    pub datasets: Vec<String>,
    pub node_ids: Vec<String>,
    pub features: Vec<String>,
    /// Completed rounds, oldest first.
    pub rounds: Vec<RoundInfo>,
    /// Plan of the latest completed round.
    pub previous: Option<TaskPlan>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundInfo {
    /// 1-based round index.
    pub index: usize,
    /// Intents of the steps that produced output.
    pub intents: Vec<Intent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ParseOutcome {
    Plan { plan: TaskPlan },
    Clarification { message: String },
}

impl ParseOutcome {
    pub fn plan(&self) -> Option<&TaskPlan> {
        match self {
            ParseOutcome::Plan { plan } => Some(plan),
            ParseOutcome::Clarification { .. } => None,
        }
    }
}

const EXAMPLES: &str = "for example \"show the location of all sensor nodes\", \"cluster the sensors into 3 clusters\" or \"predict node s0_00 on 2014-05-14\"";

fn re(pattern: &str) -> Regex {
    Regex::new(pattern).expect("valid pattern")
}

macro_rules! regex {
    ($name:ident, $pattern:expr) => {
        static $name: LazyLock<Regex> = LazyLock::new(|| re($pattern));
    };
}

const NUM: &str = r"(\d+|one|two|three|four|five|six|seven|eight|nine|ten|eleven|twelve)";

regex!(
    THEN,
    r"(?i)\s*,?\s*\b(?:and then|then|after that|afterwards)\b\s*"
);
regex!(
    HPO,
    r"\b(hpo|hyper-?parameters?|tun(e|ing)|optimi[sz](e|es|ing|ation)|genetic|evolutionary)\b"
);
regex!(
    COMPARE,
    r"\b(compare|comparison|contrast|versus|vs)\b.*\bclusters?\b|\bclusters?\b.*\b(compare|comparison|contrast)\b|inter-?cluster|between (the )?(\w+ )?clusters|among (the )?clusters|how similar are (the )?(\w+ )?clusters|cluster similarity|similarity of (the )?clusters|cluster profiles?"
);
regex!(PREDICT, r"\b(predict\w*|forecast\w*)\b");
regex!(
    INSPECT,
    r"\b(inspect|readings?|series|history|historical|details?|trend)\b"
);
regex!(
    CLUSTER,
    r"\b(cluster\w*|group\w*|partition\w*|segment\w*|communit\w*)\b"
);
regex!(
    SIMILARITY,
    r"\b(similar\w*|diffusion|affinity|correlat\w*)\b"
);
regex!(LOCATE, r"\b(locat\w*|where|positions?|coordinates|map)\b");

regex!(VIZ_GRAPH, r"\b(graph|network|force)\b");
regex!(
    VIZ_HEATMAP,
    r"\b(heatmap|heat map|matrix)\b|similar|inter-?cluster"
);
regex!(
    VIZ_PARALLEL,
    r"parallel|profiles?|pollut\w*|levels?|features?|\bmeans?\b|averages?"
);

regex!(
    K_COUNT,
    &format!(r"\b{NUM}\s+(clusters|groups|partitions|segments|communities)\b")
);
regex!(K_EQ, r"\bk\s*(?:=|:|of|is)?\s*(\d+)\b");
regex!(
    CLUSTER_LIST,
    r"\bclusters?\s+(\d+(?:\s*(?:,|and|&|vs\.?|versus|with)\s*\d+)+)"
);
regex!(CLUSTER_ONE, r"\bcluster\s+(?:number\s+|no\.?\s*|#)?(\d+)\b");
regex!(ALPHA, r"(?:\balpha|α)\s*(?:=|:|of|to|is)?\s*(\d*\.?\d+)");
regex!(THETA, r"(?:\btheta|θ)\s*(?:=|:|of|to|is)?\s*(\d*\.?\d+)");
regex!(LAMBDA, r"(?:\blambda|λ)\s*(?:=|:|of|to|is)?\s*(\d*\.?\d+)");
regex!(DATE, r"\b(\d{4}-\d{2}-\d{2})\b");
regex!(
    EPOCHS,
    r"\b(\d+)\s+epochs?\b|\bepochs?\s*(?:=|:|of)?\s*(\d+)\b"
);
regex!(
    ISLANDS,
    &format!(r"\b{NUM}\s+islands?\b|\bislands?\s*(?:=|:|of)?\s*(\d+)\b")
);
regex!(
    POPULATION,
    r"\b(?:population|pop)(?:\s+size)?\s*(?:=|:|of)?\s*(\d+)\b|\b(\d+)\s+individuals\b"
);
regex!(INNER, r"\b(\d+)\s+generations\b");
regex!(
    OUTER,
    r"\b(\d+)\s+(?:migrations|migration rounds|outer iterations)\b"
);
regex!(
    MAX_HIDDEN,
    r"\b(?:up to|at most|max(?:imum)?(?: of)?)\s+(\d+)\s+hidden\b"
);
regex!(ROUND, r"\bround\s+(?:#\s*)?(\d+)\b");
regex!(
    REVISE,
    r"\b(instead|rather|change|switch|again|retry|try|use)\b"
);
regex!(
    ANAPHORA,
    r"\b(them|those|these|it|that|previous|above|same|the results?)\b"
);
regex!(
    NODE_WORD,
    r"(?i)\b(?:node|sensor|station)s?\s+([A-Za-z0-9_/\-.]+)"
);
regex!(DATASET_WORD, r"(?i)\bdataset\s+([A-Za-z0-9_/\-.]+)");

fn number(word: &str) -> Option<usize> {
    let words = [
        "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
        "eleven", "twelve",
    ];
    word.parse()
        .ok()
        .or_else(|| words.iter().position(|w| *w == word))
}

fn capture_num(r: &Regex, text: &str) -> Option<usize> {
    r.captures(text)
        .and_then(|c| c.iter().skip(1).flatten().find_map(|m| number(m.as_str())))
}

fn capture_f64(r: &Regex, text: &str) -> Option<f64> {
    r.captures(text)
        .and_then(|c| c.get(1))
        .and_then(|m| m.as_str().parse().ok())
}

fn trim_token(t: &str) -> &str {
    t.trim_matches(|c: char| ",;:?!()\"'".contains(c))
        .trim_end_matches('.')
}

fn detect_intent(lower: &str, has_nodes: bool) -> Option<Intent> {
    let checks: [(&Regex, Intent); 7] = [
        (&HPO, Intent::Hpo),
        (&COMPARE, Intent::CompareClusters),
        (&PREDICT, Intent::Predict),
        (&INSPECT, Intent::InspectNode),
        (&CLUSTER, Intent::Cluster),
        (&SIMILARITY, Intent::Similarity),
        (&LOCATE, Intent::LocateSensors),
    ];
    checks
        .into_iter()
        .find(|(r, _)| r.is_match(lower))
        .map(|(_, i)| i)
        .or(has_nodes.then_some(Intent::InspectNode))
}

fn pick_visualization(lower: &str, intent: Intent) -> VisualizationKind {
    match intent {
        Intent::Similarity if VIZ_GRAPH.is_match(lower) => VisualizationKind::ForceGraph,
        Intent::CompareClusters if VIZ_PARALLEL.is_match(lower) => {
            VisualizationKind::ParallelCoords
        }
        Intent::CompareClusters if VIZ_HEATMAP.is_match(lower) => VisualizationKind::Heatmap,
        _ => intent.default_visualization(),
    }
}

/// Slot values found in one clause, before intent filtering.
fn extract(clause: &str, ctx: &ParseContext) -> PlanParams {
    let lower = clause.to_lowercase();
    let mut p = PlanParams {
        k: capture_num(&K_COUNT, &lower).or_else(|| capture_num(&K_EQ, &lower)),
        alpha: capture_f64(&ALPHA, &lower),
        theta: capture_f64(&THETA, &lower),
        lambda: capture_f64(&LAMBDA, &lower),
        epochs: capture_num(&EPOCHS, &lower),
        islands: capture_num(&ISLANDS, &lower),
        population: capture_num(&POPULATION, &lower),
        inner_iterations: capture_num(&INNER, &lower),
        outer_iterations: capture_num(&OUTER, &lower),
        max_hidden: capture_num(&MAX_HIDDEN, &lower).map(|v| v as i64),
        from_round: capture_num(&ROUND, &lower),
        ..PlanParams::default()
    };
    if let Some(c) = CLUSTER_LIST.captures(&lower) {
        let digits = re(r"\d+");
        p.clusters = digits
            .find_iter(&c[1])
            .filter_map(|m| m.as_str().parse().ok())
            .collect();
    }
    p.cluster = CLUSTER_ONE
        .captures(&lower)
        .and_then(|c| c[1].parse().ok())
        .filter(|_| p.clusters.is_empty());
    let dates: Vec<NaiveDate> = DATE
        .captures_iter(&lower)
        .filter_map(|c| NaiveDate::parse_from_str(&c[1], "%Y-%m-%d").ok())
        .collect();
    match dates.as_slice() {
        [] => {}
        [d] => {
            p.date_from = Some(*d);
            p.date_to = Some(*d);
        }
        [a, b, ..] => {
            p.date_from = Some(*a);
            p.date_to = Some(*b);
        }
    }
    for raw in clause.split_whitespace() {
        let token = trim_token(raw);
        if let Some(id) = ctx
            .node_ids
            .iter()
            .find(|id| id.eq_ignore_ascii_case(token))
        {
            if !p.nodes.contains(id) {
                p.nodes.push(id.clone());
            }
        }
        if p.feature.is_none() {
            p.feature = ctx
                .features
                .iter()
                .find(|f| f.eq_ignore_ascii_case(token))
                .cloned();
        }
        if let Some(ds) = ctx.datasets.iter().find(|d| d.as_str() == token) {
            p.dataset = Some(ds.clone());
        }
    }
    for c in NODE_WORD.captures_iter(clause) {
        let token = trim_token(&c[1]).to_string();
        let known = ctx
            .node_ids
            .iter()
            .any(|id| id.eq_ignore_ascii_case(&token));
        let looks_like_id =
            token.chars().any(|ch| ch.is_ascii_digit()) && DATE.find(&token).is_none();
        if !known && looks_like_id && !p.nodes.contains(&token) {
            p.nodes.push(token);
        }
    }
    if let Some(c) = DATASET_WORD.captures(clause) {
        p.dataset = Some(trim_token(&c[1]).to_string());
    }
    p
}

/// Latest completed round that produced input for `intent` when the text refers back.
fn resolve_reference(lower: &str, intent: Intent, ctx: &ParseContext) -> Option<usize> {
    if !ANAPHORA.is_match(lower) {
        return None;
    }
    let wanted: &[Intent] = match intent {
        Intent::Cluster => &[Intent::Similarity],
        Intent::CompareClusters | Intent::LocateSensors | Intent::InspectNode => {
            &[Intent::Cluster, Intent::CompareClusters]
        }
        _ => return None,
    };
    ctx.rounds
        .iter()
        .rev()
        .find(|r| r.intents.iter().any(|i| wanted.contains(i)))
        .map(|r| r.index)
}

fn clarify(message: impl Into<String>) -> ParseOutcome {
    ParseOutcome::Clarification {
        message: message.into(),
    }
}

/// Parses a request with the keyword grammar. A clause without an intent keyword, or one
/// repeating the previous intent with words like "instead" or "again", revises the previous
/// plan (when there is one) with the slots it does name.
pub fn parse_rules(text: &str, ctx: &ParseContext) -> ParseOutcome {
    let text = text.trim();
    if text.is_empty() {
        return clarify(format!(
            "The request is empty. Ask for an analysis, {EXAMPLES}."
        ));
    }
    if ctx.datasets.is_empty() {
        return clarify("No dataset is bound to this session yet; upload or synthesize one first.");
    }
    let mut steps: Vec<TaskPlan> = Vec::new();
    for (i, clause) in THEN
        .split(text)
        .filter(|c| !c.trim().is_empty())
        .enumerate()
    {
        let lower = clause.to_lowercase();
        let slots = extract(clause, ctx);
        let step = match detect_intent(&lower, !slots.nodes.is_empty()) {
            Some(intent)
                if i == 0
                    && REVISE.is_match(&lower)
                    && ctx.previous.as_ref().is_some_and(|p| p.intent == intent) =>
            {
                let prev = ctx.previous.as_ref().expect("checked");
                let mut params = prev.params.overlay(&slots);
                params.retain_for(intent);
                let named = pick_visualization(&lower, intent);
                TaskPlan {
                    intent,
                    params,
                    visualization: if named == intent.default_visualization() {
                        prev.visualization
                    } else {
                        named
                    },
                    provenance: Provenance::Rules,
                    then: None,
                }
            }
            Some(intent) => {
                let mut params = slots;
                params.retain_for(intent);
                if i == 0
                    && params.from_round.is_none()
                    && intent.accepts(super::plan::Param::FromRound)
                {
                    params.from_round = resolve_reference(&lower, intent, ctx);
                }
                TaskPlan {
                    intent,
                    params,
                    visualization: pick_visualization(&lower, intent),
                    provenance: Provenance::Rules,
                    then: None,
                }
            }
            None => match (&ctx.previous, i) {
                (Some(prev), 0) => {
                    let mut params = prev.params.overlay(&slots);
                    params.retain_for(prev.intent);
                    TaskPlan {
                        intent: prev.intent,
                        params,
                        visualization: prev.visualization,
                        provenance: Provenance::Rules,
                        then: None,
                    }
                }
                _ => {
                    return clarify(format!(
                        "I could not tell what to do with \"{}\". Ask for an analysis, {EXAMPLES}.",
                        clause.trim()
                    ))
                }
            },
        };
        steps.push(step);
    }
    if steps.is_empty() {
        return clarify(format!(
            "The request is empty. Ask for an analysis, {EXAMPLES}."
        ));
    }
    let first = &mut steps[0];
    match &first.params.dataset {
        Some(d) if !ctx.datasets.contains(d) => {
            return clarify(format!("Dataset {d} is not bound to this session."));
        }
        Some(_) => {}
        None => first.params.dataset = ctx.datasets.last().cloned(),
    }
    let mut plan = steps.pop().expect("nonempty");
    while let Some(mut prev) = steps.pop() {
        prev.then = Some(Box::new(plan));
        plan = prev;
    }
    match plan.validate() {
        Ok(()) => ParseOutcome::Plan { plan },
        Err(e) => clarify(format!("{e}. Please rephrase the request.")),
    }
}
