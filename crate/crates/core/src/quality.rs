//! Corpus measurements: API metrics, dialogue structure, hallucination
//! checks and the LLM judge.

use std::collections::BTreeSet;
use std::fmt;

use indexmap::IndexMap;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::engine::{
    call_sites, dependent_args, is_injected, render_value, scalars, DialogueTranscript, Turn, TurnKind,
};
use crate::gateway::{Gateway, GatewayError, Shape};
use crate::graph::ToolGraph;
use crate::hardener::tools_available_at;
use crate::planner::{DialoguePlan, Marker, StepRole};
use crate::prompts;
use crate::schema::{flatten_output_names, ToolPool, TypeTag};
use crate::text::{contains_token, normalize_value_text};

#[derive(Debug, Error)]
pub enum QualityError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("judge reply has no parsable score for {0}")]
    JudgeUnparsable(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricSettings {
    /// Count object/array results toward complex-API usage as well as inputs.
    pub cau_counts_results: bool,
    pub depth_cap: usize,
}

impl Default for MetricSettings {
    fn default() -> Self {
        MetricSettings { cau_counts_results: false, depth_cap: 32 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiMetricsReport {
    pub apis_per_domain: f64,
    pub params_per_api: f64,
    pub cau: f64,
    pub rpr: f64,
    pub ic: f64,
    pub longest_chain: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub conventions: Vec<String>,
}

pub fn api_metrics(pool: &ToolPool, graph: &ToolGraph, settings: &MetricSettings) -> ApiMetricsReport {
    let n = pool.len().max(1) as f64;
    let outputs: BTreeSet<String> = pool.tools.iter().flat_map(flatten_output_names).collect();
    let mut conventions = Vec::new();
    let mut ic = 0usize;
    let mut complex = 0usize;
    let mut rpr = 0.0;
    let mut params = 0usize;
    for t in &pool.tools {
        params += t.parameters.len();
        ic += t.parameters.keys().filter(|p| outputs.contains(*p)).count();
        let input_complex = t.parameters.values().any(|p| p.type_tag.is_complex());
        let result_complex = settings.cau_counts_results && t.results.values().any(|p| p.type_tag.is_complex());
        complex += usize::from(input_complex || result_complex);
        if t.parameters.is_empty() {
            rpr += 1.0;
            conventions.push(format!("{} has no parameters; its required ratio is taken as 1.0", t.name));
        } else {
            rpr += t.required.len() as f64 / t.parameters.len() as f64;
        }
    }
    ApiMetricsReport {
        apis_per_domain: pool.len() as f64,
        params_per_api: params as f64 / n,
        cau: complex as f64 / n,
        rpr: rpr / n,
        ic: ic as f64 / n,
        longest_chain: graph.longest_simple_path(settings.depth_cap),
        conventions,
    }
}

/// Mean of per-domain reports; `longest_chain` takes the maximum.
pub fn aggregate_api_metrics(reports: &[ApiMetricsReport]) -> Option<ApiMetricsReport> {
    let n = reports.len() as f64;
    let mean = |f: fn(&ApiMetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    (!reports.is_empty()).then(|| ApiMetricsReport {
        apis_per_domain: mean(|r| r.apis_per_domain),
        params_per_api: mean(|r| r.params_per_api),
        cau: mean(|r| r.cau),
        rpr: mean(|r| r.rpr),
        ic: mean(|r| r.ic),
        longest_chain: reports.iter().map(|r| r.longest_chain).max().unwrap_or(0),
        conventions: reports.iter().flat_map(|r| r.conventions.clone()).collect(),
    })
}

impl fmt::Display for ApiMetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "| APIs/Domain | Params/API | CAU | RPR | IC | Longest Chain |")?;
        writeln!(f, "|---|---|---|---|---|---|")?;
        writeln!(
            f,
            "| {:.2} | {:.2} | {:.3} | {:.3} | {:.2} | {} |",
            self.apis_per_domain, self.params_per_api, self.cau, self.rpr, self.ic, self.longest_chain
        )
    }
}

/// User-opened segments of a dialogue, as turn index ranges.
pub fn segments(turns: &[Turn]) -> Vec<std::ops::Range<usize>> {
    let mut starts = Vec::new();
    for (i, t) in turns.iter().enumerate() {
        if t.kind != TurnKind::User {
            continue;
        }
        let folds = match t.act() {
            Some(act) => act == "USER_RESPONSE_TO_CLARIFICATION",
            None => {
                t.meta.contains_key("provided_tool")
                    || turns[..i]
                        .iter()
                        .rev()
                        .find(|p| p.kind != TurnKind::System)
                        .is_some_and(|p| p.kind == TurnKind::AssistantText && p.content.trim_end().ends_with('?'))
            }
        };
        if !folds || starts.is_empty() {
            starts.push(i);
        }
    }
    let mut out = Vec::new();
    for (k, &s) in starts.iter().enumerate() {
        out.push(s..starts.get(k + 1).copied().unwrap_or(turns.len()));
    }
    out
}

/// Per segment: number of calls and whether a later call consumes an
/// earlier same-segment output, by value equality.
pub fn segment_profile(turns: &[Turn]) -> Vec<(usize, bool)> {
    let sites = call_sites(turns, true);
    segments(turns)
        .into_iter()
        .map(|r| {
            let inside: Vec<_> = sites.iter().filter(|s| r.contains(&s.call)).collect();
            let chained = inside
                .iter()
                .enumerate()
                .any(|(j, b)| inside[..j].iter().any(|a| !dependent_args(turns, a, b).is_empty()));
            (inside.len(), chained)
        })
        .collect()
}

/// Per partition of a plan: call count and whether a call reads an output
/// of an earlier call in the same partition.
pub fn plan_profile(plan: &DialoguePlan) -> Vec<(usize, bool)> {
    let mut out: Vec<(usize, bool)> = Vec::new();
    let mut called: Vec<&str> = Vec::new();
    for step in &plan.steps {
        match step.role {
            StepRole::UserUtterance => {
                out.push((0, false));
                called.clear();
            }
            StepRole::CallTool => {
                let Some(cur) = out.last_mut() else { continue };
                cur.0 += 1;
                let reads = step.params.values().any(|m| match Marker::parse(m) {
                    Some(Marker::Output { tool, .. }) => called.contains(&tool.as_str()),
                    _ => false,
                });
                cur.1 |= reads;
                called.push(&step.tools[0]);
            }
            _ => {}
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DialogueStatsReport {
    pub dialogues: usize,
    pub min_turns: usize,
    pub max_turns: usize,
    pub avg_turns: f64,
    pub min_tool_calls: usize,
    pub max_tool_calls: usize,
    pub avg_tool_calls: f64,
    /// Fraction of turns with at least two calls.
    pub pct_multi_step: f64,
    /// Fraction of turns where a later call consumes an earlier output.
    pub pct_true_multi_step: f64,
}

/// Plans, when given, are matched by `plan_ref` and used for unmodified
/// dialogues whose segments line up with the plan's partitions.
pub fn dialogue_stats(dialogues: &[DialogueTranscript], plans: Option<&[DialoguePlan]>) -> DialogueStatsReport {
    if dialogues.is_empty() {
        return DialogueStatsReport::default();
    }
    let mut turns = Vec::new();
    let mut calls = Vec::new();
    let (mut segs, mut multi, mut chained) = (0usize, 0usize, 0usize);
    for d in dialogues {
        let traced = segment_profile(&d.conversations);
        let profile = plans
            .and_then(|ps| ps.iter().find(|p| p.id == d.plan_ref))
            .map(plan_profile)
            .filter(|p| !d.modified && p.len() == traced.len())
            .unwrap_or(traced);
        turns.push(profile.len());
        calls.push(d.tool_calls().count());
        segs += profile.len();
        multi += profile.iter().filter(|(c, _)| *c >= 2).count();
        chained += profile.iter().filter(|(c, t)| *c >= 2 && *t).count();
    }
    let n = dialogues.len() as f64;
    let frac = |k: usize| if segs == 0 { 0.0 } else { k as f64 / segs as f64 };
    DialogueStatsReport {
        dialogues: dialogues.len(),
        min_turns: *turns.iter().min().unwrap(),
        max_turns: *turns.iter().max().unwrap(),
        avg_turns: turns.iter().sum::<usize>() as f64 / n,
        min_tool_calls: *calls.iter().min().unwrap(),
        max_tool_calls: *calls.iter().max().unwrap(),
        avg_tool_calls: calls.iter().sum::<usize>() as f64 / n,
        pct_multi_step: frac(multi),
        pct_true_multi_step: frac(chained),
    }
}

impl fmt::Display for DialogueStatsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "| Turns (min/max/avg) | Tool calls (min/max/avg) | % Multi-step | % True multi-step |")?;
        writeln!(f, "|---|---|---|---|")?;
        writeln!(
            f,
            "| {}/{}/{:.2} | {}/{}/{:.2} | {:.1} | {:.1} |",
            self.min_turns,
            self.max_turns,
            self.avg_turns,
            self.min_tool_calls,
            self.max_tool_calls,
            self.avg_tool_calls,
            100.0 * self.pct_multi_step,
            100.0 * self.pct_true_multi_step
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HallucinationReport {
    pub dialogue_id: String,
    pub tool_name: bool,
    pub param_name: bool,
    pub param_value: bool,
    /// `None` when the assisted check did not run.
    pub assistant_text: Option<bool>,
    pub findings: Vec<String>,
    pub clean: bool,
}

fn value_is_sourced(v: &Value, user_text: &str, outputs: &[String], allowed: &[String]) -> bool {
    let text = normalize_value_text(&render_value(v));
    if text.is_empty() {
        return true;
    }
    if contains_token(user_text, &text) || outputs.contains(&text) || allowed.contains(&text) {
        return true;
    }
    let Some(x) = v.as_f64() else {
        return false;
    };
    let numbers = Regex::new(r"-?\d+(?:\.\d+)?").expect("static pattern");
    std::iter::once(user_text)
        .chain(outputs.iter().map(String::as_str))
        .flat_map(|t| numbers.find_iter(t).map(|m| m.as_str()).collect::<Vec<_>>())
        .filter_map(|m| m.parse::<f64>().ok())
        .any(|y| (x - y).abs() <= 1e-9 * x.abs().max(1.0))
}

/// Deterministic checks over every non-injected call; the assistant-text
/// check runs only when a gateway is given.
pub fn detect_hallucinations(
    d: &DialogueTranscript,
    assist: Option<&Gateway>,
) -> Result<HallucinationReport, GatewayError> {
    let turns = &d.conversations;
    let mut r = HallucinationReport { dialogue_id: d.id.clone(), ..HallucinationReport::default() };
    for site in call_sites(turns, false) {
        let name = site.tool(turns);
        let tools = tools_available_at(d, site.call);
        let Some(spec) = tools.iter().find(|t| t.name == name) else {
            r.tool_name = true;
            r.findings.push(format!("turn {}: call to undeclared tool {name}", site.call));
            continue;
        };
        let prior = &turns[..site.call];
        let user_text = prior
            .iter()
            .filter(|t| t.kind == TurnKind::User)
            .map(|t| normalize_value_text(&t.content))
            .collect::<Vec<_>>()
            .join("\n");
        let outputs: Vec<String> = prior
            .iter()
            .filter(|t| t.kind == TurnKind::ToolResponse)
            .filter_map(|t| t.result.as_ref())
            .flat_map(|r| scalars(&Value::Object(r.clone())))
            .map(|v| normalize_value_text(&render_value(&v)))
            .collect();
        for (arg, v) in site.args(turns).into_iter().flatten() {
            let Some(p) = spec.parameters.get(arg) else {
                r.param_name = true;
                r.findings.push(format!("turn {}: {name} has no parameter {arg}", site.call));
                continue;
            };
            if !spec.is_required(arg) {
                continue;
            }
            let mut allowed: Vec<String> = p.enum_values.iter().flatten().map(|e| normalize_value_text(e)).collect();
            if let Some(dv) = &p.default_value {
                allowed.extend(scalars(dv).iter().map(|x| normalize_value_text(&render_value(x))));
            }
            if p.type_tag == TypeTag::Boolean {
                allowed.extend(["true".to_string(), "false".to_string()]);
            }
            if let Some(bad) = scalars(v).into_iter().find(|x| !value_is_sourced(x, &user_text, &outputs, &allowed)) {
                r.param_value = true;
                r.findings.push(format!("turn {}: {name}.{arg} = {bad} has no source", site.call));
            }
        }
    }
    if let Some(gw) = assist {
        let mut flagged = false;
        for (i, t) in turns.iter().enumerate() {
            if t.kind != TurnKind::AssistantText || is_injected(t) || t.act() == Some("ASSISTANT_CLARIFICATION") {
                continue;
            }
            let seg_start = turns[..i].iter().rposition(|p| p.kind == TurnKind::User).unwrap_or(0);
            let outputs: Vec<Value> =
                turns[seg_start..i].iter().filter_map(|p| p.result.clone().map(Value::Object)).collect();
            let req = prompts::json_request(
                prompts::TASK_ASSISTANT_CLAIMS,
                prompts::ASSISTANT_CLAIMS_INSTRUCTIONS,
                &json!({"message": t.content, "tool_outputs": outputs}),
                0.0,
            );
            let v = gw.complete_structured(&req, &Shape::object(&["hallucinated"]))?;
            if v["hallucinated"].as_bool() == Some(true) {
                flagged = true;
                r.findings.push(format!("turn {i}: {}", v["reason"].as_str().unwrap_or("unsupported claim")));
            }
        }
        r.assistant_text = Some(flagged);
    }
    r.clean = !(r.tool_name || r.param_name || r.param_value || r.assistant_text == Some(true));
    Ok(r)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeScores {
    pub naturalness: u8,
    pub coherence: u8,
    pub helpfulness: u8,
    pub accuracy: u8,
    pub comments: IndexMap<String, String>,
}

const DIMENSIONS: [&str; 4] = ["Naturalness", "Coherence", "Helpfulness", "Accuracy"];

/// Parses `N. Dimension: S / 5` lines, each optionally followed by a
/// `- Comments:` line.
pub fn parse_judge_reply(text: &str) -> Result<JudgeScores, QualityError> {
    let mut scores = [0u8; 4];
    let mut comments = IndexMap::new();
    for (i, dim) in DIMENSIONS.iter().enumerate() {
        let re = Regex::new(&format!(r"(?mi)^\W*{}\.\s*\**{dim}\**\s*:\s*\**\s*(\d+)\s*/\s*5", i + 1))
            .expect("static pattern");
        let caps = re.captures(text).ok_or_else(|| QualityError::JudgeUnparsable(dim.to_string()))?;
        let s: u8 = caps[1].parse().map_err(|_| QualityError::JudgeUnparsable(dim.to_string()))?;
        if !(1..=5).contains(&s) {
            return Err(QualityError::JudgeUnparsable(dim.to_string()));
        }
        scores[i] = s;
        let rest = &text[caps.get(0).expect("whole match").end()..];
        if let Some(line) = rest.lines().skip(1).map(str::trim).find(|l| !l.is_empty()) {
            if let Some(c) = line.trim_start_matches('-').trim().strip_prefix("Comments:") {
                comments.insert(dim.to_lowercase(), c.trim().to_string());
            }
        }
    }
    Ok(JudgeScores {
        naturalness: scores[0],
        coherence: scores[1],
        helpfulness: scores[2],
        accuracy: scores[3],
        comments,
    })
}

/// `Role: content` lines.
pub fn render_dialogue(d: &DialogueTranscript) -> String {
    d.conversations
        .iter()
        .filter(|t| t.kind != TurnKind::System)
        .map(|t| {
            let role = match t.kind {
                TurnKind::User => "User",
                TurnKind::ToolResponse => "Tool",
                _ => "Assistant",
            };
            format!("- {role}: {}", t.content)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// One judge call at temperature 0, with one retry on an unparsable reply.
pub fn judge_dialogue(gateway: &Gateway, d: &DialogueTranscript) -> Result<JudgeScores, QualityError> {
    let turns: Vec<Value> = d
        .conversations
        .iter()
        .filter(|t| t.kind != TurnKind::System)
        .map(|t| json!({"role": t.role, "content": t.content}))
        .collect();
    let req = prompts::judge_request(&render_dialogue(d), &Value::Array(turns), 0.0);
    let mut last = None;
    for _ in 0..2 {
        let reply = gateway.complete_chat(&req)?;
        match parse_judge_reply(&reply.content) {
            Ok(s) => return Ok(s),
            Err(e) => last = Some(e),
        }
    }
    Err(last.expect("two attempts ran"))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct JudgeSummary {
    pub judged: usize,
    pub failed: usize,
    pub naturalness: f64,
    pub coherence: f64,
    pub helpfulness: f64,
    pub accuracy: f64,
}

pub fn summarize_judgements(scores: &[JudgeScores], failed: usize) -> JudgeSummary {
    let n = scores.len().max(1) as f64;
    let mean = |f: fn(&JudgeScores) -> u8| scores.iter().map(|s| f64::from(f(s))).sum::<f64>() / n;
    JudgeSummary {
        judged: scores.len(),
        failed,
        naturalness: mean(|s| s.naturalness),
        coherence: mean(|s| s.coherence),
        helpfulness: mean(|s| s.helpfulness),
        accuracy: mean(|s| s.accuracy),
    }
}

impl fmt::Display for JudgeSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "| Nat | Coh | Hel | Acc | Judged |")?;
        writeln!(f, "|---|---|---|---|---|")?;
        writeln!(
            f,
            "| {:.2} | {:.2} | {:.2} | {:.2} | {} |",
            self.naturalness, self.coherence, self.helpfulness, self.accuracy, self.judged
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HallucinationSummary {
    pub dialogues: usize,
    pub tool_name: usize,
    pub param_name: usize,
    pub param_value: usize,
    pub assistant_text: usize,
    pub clean: usize,
}

pub fn summarize_hallucinations(reports: &[HallucinationReport]) -> HallucinationSummary {
    HallucinationSummary {
        dialogues: reports.len(),
        tool_name: reports.iter().filter(|r| r.tool_name).count(),
        param_name: reports.iter().filter(|r| r.param_name).count(),
        param_value: reports.iter().filter(|r| r.param_value).count(),
        assistant_text: reports.iter().filter(|r| r.assistant_text == Some(true)).count(),
        clean: reports.iter().filter(|r| r.clean).count(),
    }
}

impl fmt::Display for HallucinationSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pct = |k: usize| if self.dialogues == 0 { 0.0 } else { 100.0 * k as f64 / self.dialogues as f64 };
        writeln!(f, "| Hallucination type | % dialogues |")?;
        writeln!(f, "|---|---|")?;
        writeln!(f, "| Tool name | {:.1} |", pct(self.tool_name))?;
        writeln!(f, "| Parameter name | {:.1} |", pct(self.param_name))?;
        writeln!(f, "| Parameter value | {:.1} |", pct(self.param_value))?;
        writeln!(f, "| Assistant text | {:.1} |", pct(self.assistant_text))
    }
}
