//! Workflow motif extraction (linear, fan, conditional), goal synthesis,
//! hybrid scoring and diversity-aware selection.

use std::collections::{BTreeSet, HashMap};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::gateway::{Gateway, GatewayError, Shape};
use crate::graph::ToolGraph;
use crate::prompts::{self, Temperatures};
use crate::schema::{flatten_output_params, ParamSchema, ToolSpec, TypeTag};
use crate::text::cosine;
use crate::util::par_map;

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("invalid sampler settings: {0}")]
    Settings(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatternType {
    Linear,
    Fan,
    Conditional,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FanBranches {
    pub start: String,
    pub parallel: Vec<String>,
    pub merge: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub tool: String,
    pub output_name: String,
    /// Predicate value → branch tool.
    pub branches: IndexMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkflowSample {
    pub pattern_type: PatternType,
    pub tool_path: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fan_branches: Option<FanBranches>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision: Option<Decision>,
}

impl WorkflowSample {
    pub fn linear(path: Vec<String>) -> Self {
        WorkflowSample { pattern_type: PatternType::Linear, tool_path: path, fan_branches: None, decision: None }
    }

    /// Producer/consumer pairs the dataflow score averages over.
    pub fn flow_pairs(&self) -> Vec<(&str, &str)> {
        match (&self.fan_branches, &self.decision) {
            (Some(f), _) => f
                .parallel
                .iter()
                .map(|p| (f.start.as_str(), p.as_str()))
                .chain(f.parallel.iter().map(|p| (p.as_str(), f.merge.as_str())))
                .collect(),
            (None, Some(d)) => {
                let mut seen = BTreeSet::new();
                d.branches.values().filter(|b| seen.insert(b.as_str())).map(|b| (d.tool.as_str(), b.as_str())).collect()
            }
            _ => self.tool_path.windows(2).map(|w| (w[0].as_str(), w[1].as_str())).collect(),
        }
    }

    /// Checks the pattern's structural invariant against `g`.
    pub fn check(&self, g: &ToolGraph) -> Result<(), String> {
        let distinct: BTreeSet<&String> = self.tool_path.iter().collect();
        if distinct.len() != self.tool_path.len() {
            return Err("tool path repeats a tool".into());
        }
        match self.pattern_type {
            PatternType::Linear => {
                if self.tool_path.len() < 2 {
                    return Err("linear path needs at least two tools".into());
                }
                for w in self.tool_path.windows(2) {
                    if !g.has_edge(&w[0], &w[1]) {
                        return Err(format!("no edge {} -> {}", w[0], w[1]));
                    }
                }
            }
            PatternType::Fan => {
                let f = self.fan_branches.as_ref().ok_or("fan sample without branches")?;
                if f.parallel.len() < 2 {
                    return Err("fan needs at least two parallel tools".into());
                }
                for p in &f.parallel {
                    if !g.has_edge(&f.start, p) || !g.has_edge(p, &f.merge) {
                        return Err(format!("{p} is not between {} and {}", f.start, f.merge));
                    }
                }
            }
            PatternType::Conditional => {
                let d = self.decision.as_ref().ok_or("conditional sample without decision")?;
                let tool = g.nodes.get(&d.tool).ok_or("decision tool missing")?;
                let field = tool.results.get(&d.output_name).ok_or("decision output missing")?;
                if !is_predicate(&d.output_name, field) {
                    return Err(format!("{} is not a boolean or enum output", d.output_name));
                }
                let branches: BTreeSet<&String> = d.branches.values().collect();
                if branches.len() < 2 {
                    return Err("conditional needs two distinct branches".into());
                }
                if let Some(b) = branches.iter().find(|b| !g.has_edge(&d.tool, b)) {
                    return Err(format!("{b} is not a successor of {}", d.tool));
                }
            }
        }
        Ok(())
    }
}

/// Weights of the hybrid goal score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreWeights {
    pub judge: f64,
    pub dataflow: f64,
    pub length: f64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        ScoreWeights { judge: 0.5, dataflow: 0.8, length: 0.3 }
    }
}

impl ScoreWeights {
    pub fn combine(&self, coherence: i64, relevance: i64, dataflow: f64, length_bonus: f64) -> f64 {
        self.judge * (coherence + relevance) as f64 + self.dataflow * dataflow + self.length * length_bonus
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalRecord {
    pub workflow: WorkflowSample,
    pub goal_text: String,
    pub coherence: i64,
    pub relevance: i64,
    pub dataflow_score: f64,
    pub length_bonus: f64,
    pub final_score: f64,
    #[serde(default)]
    pub metadata: Map<String, Value>,
}

impl GoalRecord {
    pub fn recomputed_score(&self, w: &ScoreWeights) -> f64 {
        w.combine(self.coherence, self.relevance, self.dataflow_score, self.length_bonus)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerSettings {
    pub beam_width: usize,
    pub max_depth: usize,
    pub top_k: usize,
    pub mmr_lambda: f64,
    pub weights: ScoreWeights,
    /// Pairs with coherence + relevance below this are discarded.
    pub min_quality: i64,
    pub max_fan_size: usize,
    pub workers: usize,
    pub temperatures: Temperatures,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        SamplerSettings {
            beam_width: 4,
            max_depth: 5,
            top_k: 10,
            mmr_lambda: 0.7,
            weights: ScoreWeights::default(),
            min_quality: 0,
            max_fan_size: 3,
            workers: 4,
            temperatures: Temperatures::default(),
        }
    }
}

/// Instrumentation of one beam search.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BeamStats {
    pub max_retained: usize,
    pub longest_emitted: usize,
}

fn is_predicate(name: &str, field: &ParamSchema) -> bool {
    let id_like = ["_id", "_identifier", "_date", "_time"].iter().any(|s| name.ends_with(s)) || name == "id";
    !id_like && (field.type_tag == TypeTag::Boolean || (field.type_tag == TypeTag::String && field.is_enum()))
}

fn field_text(name: &str, s: &ParamSchema) -> String {
    if s.description.is_empty() {
        name.to_string()
    } else {
        format!("{name}: {}", s.description)
    }
}

/// Embedded output and input fields per tool.
#[derive(Debug, Clone, Default)]
pub struct FieldVectors {
    outputs: HashMap<String, Vec<Vec<f64>>>,
    inputs: HashMap<String, Vec<Vec<f64>>>,
}

impl FieldVectors {
    pub fn build(gateway: &Gateway, tools: &[ToolSpec]) -> Result<Self, GatewayError> {
        let mut per_tool: Vec<(Vec<String>, Vec<String>)> = Vec::new();
        let mut all = Vec::new();
        for t in tools {
            let outs: Vec<String> = flatten_output_params(t).into_iter().map(|(n, s)| field_text(&n, s)).collect();
            let ins: Vec<String> = t.parameters.iter().map(|(n, s)| field_text(n, s)).collect();
            all.extend(outs.iter().cloned());
            all.extend(ins.iter().cloned());
            per_tool.push((outs, ins));
        }
        all.sort();
        all.dedup();
        let mut table = HashMap::new();
        if !all.is_empty() {
            for (t, v) in all.iter().zip(gateway.embed_texts(&all)?) {
                table.insert(t.clone(), v.values);
            }
        }
        let mut fv = FieldVectors::default();
        for (t, (outs, ins)) in tools.iter().zip(per_tool) {
            fv.outputs.insert(t.name.clone(), outs.iter().map(|x| table[x].clone()).collect());
            fv.inputs.insert(t.name.clone(), ins.iter().map(|x| table[x].clone()).collect());
        }
        Ok(fv)
    }

    /// Best cosine between any output of `from` and any input of `to`.
    pub fn pair_score(&self, from: &str, to: &str) -> f64 {
        let (Some(outs), Some(ins)) = (self.outputs.get(from), self.inputs.get(to)) else {
            return 0.0;
        };
        let mut best: Option<f64> = None;
        for o in outs {
            for i in ins {
                let c = cosine(o, i);
                best = Some(best.map_or(c, |b: f64| b.max(c)));
            }
        }
        best.unwrap_or(0.0)
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Per-start beam search over simple paths. Each start node keeps at most
/// `beam_width` partial paths per depth, ranked by mean pair score; every
/// retained path of two or more tools is emitted.
pub fn find_linear_paths(
    g: &ToolGraph,
    beam_width: usize,
    max_depth: usize,
    pair_score: &dyn Fn(&str, &str) -> f64,
) -> (Vec<WorkflowSample>, BeamStats) {
    let mut stats = BeamStats::default();
    let mut out = Vec::new();
    let beam_width = beam_width.max(1);
    for start in g.nodes.names() {
        let mut frontier: Vec<(Vec<&str>, f64)> = vec![(vec![start], 0.0)];
        for _ in 2..=max_depth {
            let mut next: Vec<(Vec<&str>, f64)> = Vec::new();
            for (path, total) in &frontier {
                let last = *path.last().expect("paths are nonempty");
                for s in g.successors(last) {
                    if path.contains(&s) {
                        continue;
                    }
                    let mut p = path.clone();
                    p.push(s);
                    next.push((p, total + pair_score(last, s)));
                }
            }
            if next.is_empty() {
                break;
            }
            next.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            next.truncate(beam_width);
            stats.max_retained = stats.max_retained.max(next.len());
            for (p, _) in &next {
                stats.longest_emitted = stats.longest_emitted.max(p.len());
                out.push(WorkflowSample::linear(p.iter().map(|s| s.to_string()).collect()));
            }
            frontier = next;
        }
    }
    (out, stats)
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Fan-out/fan-in motifs: successor groups of one start that share a child.
pub fn find_fan_patterns(g: &ToolGraph, max_fan_size: usize) -> Vec<WorkflowSample> {
    let mut out = Vec::new();
    for start in g.nodes.names() {
        let succ = g.successors(start);
        for k in 2..=max_fan_size.min(succ.len()) {
            for combo in combinations(succ.len(), k) {
                let members: Vec<&str> = combo.iter().map(|&i| succ[i]).collect();
                let mut common: Option<BTreeSet<&str>> = None;
                for m in &members {
                    let s: BTreeSet<&str> = g.successors(m).into_iter().collect();
                    common = Some(match common {
                        None => s,
                        Some(c) => c.intersection(&s).copied().collect(),
                    });
                }
                let mut merges: Vec<&str> =
                    common.unwrap_or_default().into_iter().filter(|c| *c != start && !members.contains(c)).collect();
                merges.sort_by_key(|m| g.nodes.names().position(|n| n == *m));
                for merge in merges {
                    let mut path = vec![start.to_string()];
                    path.extend(members.iter().map(|m| m.to_string()));
                    path.push(merge.to_string());
                    out.push(WorkflowSample {
                        pattern_type: PatternType::Fan,
                        tool_path: path,
                        fan_branches: Some(FanBranches {
                            start: start.into(),
                            parallel: members.iter().map(|m| m.to_string()).collect(),
                            merge: merge.into(),
                        }),
                        decision: None,
                    });
                }
            }
        }
    }
    out
}

fn value_matches_tool(value: &str, tool: &str) -> bool {
    let v = value.to_lowercase();
    crate::text::words(tool)
        .iter()
        .any(|w| *w == v || (w.len() >= 4 && v.starts_with(w.as_str())) || (v.len() >= 4 && w.starts_with(v.as_str())))
}

/// Branching motifs on boolean or enum outputs with two or more successors.
pub fn find_conditional_patterns(g: &ToolGraph) -> Vec<WorkflowSample> {
    let mut out = Vec::new();
    for tool in &g.nodes.tools {
        let succ = g.successors(&tool.name);
        if succ.len() < 2 {
            continue;
        }
        for (name, field) in &tool.results {
            if !is_predicate(name, field) {
                continue;
            }
            let values: Vec<String> = match &field.enum_values {
                Some(v) if field.type_tag == TypeTag::String => v.clone(),
                _ => vec!["true".into(), "false".into()],
            };
            let mut branches = IndexMap::new();
            let mut used = BTreeSet::new();
            for v in &values {
                if let Some(s) = succ.iter().find(|s| !used.contains(**s) && value_matches_tool(v, s)) {
                    used.insert(*s);
                    branches.insert(v.clone(), s.to_string());
                }
            }
            let mut free = succ.iter().filter(|s| !used.contains(**s)).cycle();
            let leftover = succ.iter().any(|s| !used.contains(*s));
            for v in &values {
                if !branches.contains_key(v) {
                    let target = if leftover { free.next().copied() } else { succ.first().copied() };
                    if let Some(t) = target {
                        branches.insert(v.clone(), t.to_string());
                    }
                }
            }
            let ordered: IndexMap<String, String> =
                values.iter().filter_map(|v| branches.get(v).map(|b| (v.clone(), b.clone()))).collect();
            let distinct: BTreeSet<&String> = ordered.values().collect();
            if distinct.len() < 2 {
                continue;
            }
            let mut path = vec![tool.name.clone()];
            for b in ordered.values() {
                if !path.contains(b) {
                    path.push(b.clone());
                }
            }
            out.push(WorkflowSample {
                pattern_type: PatternType::Conditional,
                tool_path: path,
                fan_branches: None,
                decision: Some(Decision { tool: tool.name.clone(), output_name: name.clone(), branches: ordered }),
            });
        }
    }
    out
}

/// Greedy maximal-marginal-relevance order over indices. Scores are min-max
/// normalized; the first pick is the top score, ties go to the lower index.
pub fn mmr_select(scores: &[f64], similarity: &dyn Fn(usize, usize) -> f64, k: usize, lambda: f64) -> Vec<usize> {
    let n = scores.len();
    if n == 0 || k == 0 {
        return Vec::new();
    }
    let (lo, hi) = scores.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &s| (l.min(s), h.max(s)));
    let norm: Vec<f64> = scores.iter().map(|&s| if hi > lo { (s - lo) / (hi - lo) } else { 1.0 }).collect();
    let mut selected: Vec<usize> = Vec::new();
    let mut remaining: Vec<usize> = (0..n).collect();
    while selected.len() < k.min(n) {
        let value = |i: usize| {
            if selected.is_empty() {
                return norm[i];
            }
            let max_sim = selected.iter().map(|&j| similarity(i, j)).fold(f64::NEG_INFINITY, f64::max);
            lambda * norm[i] - (1.0 - lambda) * max_sim
        };
        let mut best = remaining[0];
        let mut best_v = value(best);
        for &i in &remaining[1..] {
            let v = value(i);
            if v > best_v {
                best = i;
                best_v = v;
            }
        }
        selected.push(best);
        remaining.retain(|&i| i != best);
    }
    selected
}

pub struct Sampler<'a> {
    gateway: &'a Gateway,
    settings: SamplerSettings,
}

impl<'a> Sampler<'a> {
    pub fn new(gateway: &'a Gateway, settings: SamplerSettings) -> Result<Self, SamplerError> {
        if settings.beam_width == 0 || settings.max_depth < 2 || settings.top_k == 0 {
            return Err(SamplerError::Settings(
                "beam_width and top_k must be at least 1 and max_depth at least 2".into(),
            ));
        }
        if !(0.0..=1.0).contains(&settings.mmr_lambda) {
            return Err(SamplerError::Settings("mmr_lambda must lie in [0, 1]".into()));
        }
        Ok(Sampler { gateway, settings })
    }

    pub fn settings(&self) -> &SamplerSettings {
        &self.settings
    }

    fn tool_docs(g: &ToolGraph, names: &[String]) -> Vec<Value> {
        names.iter().filter_map(|n| g.nodes.get(n)).map(ToolSpec::to_value).collect()
    }

    /// One goal per workflow. An empty reply is retried once; `None` drops
    /// the workflow.
    pub fn synthesize_goal(&self, g: &ToolGraph, w: &WorkflowSample) -> Result<Option<String>, GatewayError> {
        let mut instructions = prompts::SYNTHESIZE_GOAL_INSTRUCTIONS.to_string();
        match w.pattern_type {
            PatternType::Fan => instructions = format!("{}\n{}", prompts::SYNTHESIZE_GOAL_FAN, instructions),
            PatternType::Conditional => {
                instructions = format!("{}\n{}", prompts::SYNTHESIZE_GOAL_CONDITIONAL, instructions)
            }
            PatternType::Linear => {}
        }
        for attempt in 0..2 {
            let mut input = json!({
                "pattern_type": w.pattern_type,
                "tools": Self::tool_docs(g, &w.tool_path),
            });
            if let Some(d) = &w.decision {
                input["decision"] = json!({"tool": d.tool, "output_name": d.output_name, "branches": d.branches});
            }
            if let Some(f) = &w.fan_branches {
                input["fan"] = json!(f);
            }
            if attempt > 0 {
                input["attempt"] = json!(attempt);
            }
            let req = prompts::json_request(
                prompts::TASK_SYNTHESIZE_GOAL,
                &instructions,
                &input,
                self.settings.temperatures.goal_synthesis,
            );
            match self.gateway.complete_structured(&req, &Shape::object(&["goal"])) {
                Ok(v) => {
                    let goal = v["goal"].as_str().unwrap_or_default().trim().to_string();
                    if !goal.is_empty() {
                        return Ok(Some(goal));
                    }
                }
                Err(GatewayError::NoDocument | GatewayError::ShapeMismatch { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        Ok(None)
    }

    fn judge_goal(&self, g: &ToolGraph, w: &WorkflowSample, goal: &str) -> Result<Option<(i64, i64)>, GatewayError> {
        for attempt in 0..2 {
            let mut input = json!({"goal": goal, "tools": Self::tool_docs(g, &w.tool_path)});
            if attempt > 0 {
                input["attempt"] = json!(attempt);
            }
            let req = prompts::json_request(
                prompts::TASK_SCORE_GOAL,
                prompts::SCORE_GOAL_INSTRUCTIONS,
                &input,
                self.settings.temperatures.goal_scoring,
            );
            match self.gateway.complete_structured(&req, &Shape::object(&["coherence", "relevance"])) {
                Ok(v) => {
                    let c = v["coherence"].as_i64();
                    let r = v["relevance"].as_i64();
                    if let (Some(c), Some(r)) = (c, r) {
                        if (-2..=2).contains(&c) && (-2..=2).contains(&r) {
                            return Ok(Some((c, r)));
                        }
                    }
                }
                Err(GatewayError::NoDocument | GatewayError::ShapeMismatch { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        Ok(None)
    }

    pub fn length_bonus(&self, path_len: usize) -> f64 {
        if self.settings.max_depth <= 2 {
            return 0.0;
        }
        (path_len.saturating_sub(2) as f64 / (self.settings.max_depth - 2) as f64).clamp(0.0, 1.0)
    }

    /// Scores a workflow/goal pair. `None` when the judge never returns
    /// in-range integers.
    pub fn score_goal(
        &self,
        g: &ToolGraph,
        vectors: &FieldVectors,
        w: &WorkflowSample,
        goal: &str,
    ) -> Result<Option<GoalRecord>, GatewayError> {
        let Some((coherence, relevance)) = self.judge_goal(g, w, goal)? else {
            return Ok(None);
        };
        let dataflow = mean(w.flow_pairs().into_iter().map(|(a, b)| vectors.pair_score(a, b)));
        let length_bonus = self.length_bonus(w.tool_path.len());
        Ok(Some(GoalRecord {
            workflow: w.clone(),
            goal_text: goal.to_string(),
            coherence,
            relevance,
            dataflow_score: dataflow,
            length_bonus,
            final_score: self.settings.weights.combine(coherence, relevance, dataflow, length_bonus),
            metadata: Map::new(),
        }))
    }

    /// MMR over linear records; fan and conditional records all pass.
    pub fn select_diverse(&self, records: Vec<GoalRecord>) -> Result<Vec<GoalRecord>, GatewayError> {
        let (linear, other): (Vec<GoalRecord>, Vec<GoalRecord>) =
            records.into_iter().partition(|r| r.workflow.pattern_type == PatternType::Linear);
        let mut out = Vec::new();
        if !linear.is_empty() {
            let texts: Vec<String> = linear.iter().map(|r| r.goal_text.clone()).collect();
            let vecs = self.gateway.embed_texts(&texts)?;
            let scores: Vec<f64> = linear.iter().map(|r| r.final_score).collect();
            let sim = |i: usize, j: usize| cosine(&vecs[i].values, &vecs[j].values);
            let picks = mmr_select(&scores, &sim, self.settings.top_k, self.settings.mmr_lambda);
            out.extend(picks.into_iter().map(|i| linear[i].clone()));
        }
        out.extend(other);
        Ok(out)
    }

    /// Every motif, goal synthesis and scoring, quality filter, selection.
    pub fn sample(&self, g: &ToolGraph) -> Result<(Vec<GoalRecord>, BeamStats), SamplerError> {
        let vectors = FieldVectors::build(self.gateway, &g.nodes.tools)?;
        let (mut workflows, stats) =
            find_linear_paths(g, self.settings.beam_width, self.settings.max_depth, &|a, b| vectors.pair_score(a, b));
        workflows.extend(find_fan_patterns(g, self.settings.max_fan_size));
        workflows.extend(find_conditional_patterns(g));
        let scored = par_map(&workflows, self.settings.workers, |_, w| -> Result<Option<GoalRecord>, GatewayError> {
            let Some(goal) = self.synthesize_goal(g, w)? else {
                return Ok(None);
            };
            self.score_goal(g, &vectors, w, &goal)
        });
        let mut kept = Vec::new();
        for r in scored {
            if let Some(rec) = r? {
                if rec.coherence + rec.relevance >= self.settings.min_quality {
                    kept.push(rec);
                }
            }
        }
        Ok((self.select_diverse(kept)?, stats))
    }
}
