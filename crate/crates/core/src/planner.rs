//! Compiles a goal and its workflow into an ordered dialogue plan in which
//! every tool argument names its source.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::gateway::{Gateway, GatewayError, Shape};
use crate::graph::ToolGraph;
use crate::prompts::{self, Temperatures};
use crate::sampler::{GoalRecord, PatternType};
use crate::schema::{flatten_output_names, output_leaf_paths, ToolPool, ValidationReport, Violation, ViolationKind};
use crate::text::{contains_token, humanize};
use crate::util::derive_seed;

pub const USER_MARKER_PREFIX: &str = "$user_provided_$";

#[derive(Debug, Error)]
pub enum PlanError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("subgoal for partition {0} is empty after a retry")]
    EmptySubgoal(usize),
    #[error("unknown tool {0}")]
    UnknownTool(String),
    #[error("workflow has an empty tool path")]
    EmptyPath,
}

/// Where a tool argument comes from.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Marker {
    User { tool: String, param: String },
    Output { tool: String, output: String },
}

impl Marker {
    pub fn user(tool: &str, param: &str) -> Self {
        Marker::User { tool: tool.into(), param: param.into() }
    }

    pub fn output(tool: &str, output: &str) -> Self {
        Marker::Output { tool: tool.into(), output: output.into() }
    }

    pub fn parse(text: &str) -> Option<Marker> {
        let split = |s: &str| -> Option<(String, String)> {
            let (t, p) = s.split_once('.')?;
            (!t.is_empty() && !p.is_empty()).then(|| (t.to_string(), p.to_string()))
        };
        if let Some(rest) = text.strip_prefix(USER_MARKER_PREFIX) {
            let (tool, param) = split(rest)?;
            return Some(Marker::User { tool, param });
        }
        let rest = text.strip_prefix('$')?;
        let (tool, output) = split(rest)?;
        Some(Marker::Output { tool, output })
    }

    pub fn is_user(&self) -> bool {
        matches!(self, Marker::User { .. })
    }
}

impl fmt::Display for Marker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Marker::User { tool, param } => write!(f, "{USER_MARKER_PREFIX}{tool}.{param}"),
            Marker::Output { tool, output } => write!(f, "${tool}.{output}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StepRole {
    UserUtterance,
    AssistantClarification,
    UserResponseToClarification,
    CallTool,
    AssistantResponseTool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanStep {
    pub step_idx: usize,
    pub role: StepRole,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subgoal: Option<String>,
    #[serde(default)]
    pub tools: Vec<String>,
    /// `tool.param` → marker string.
    #[serde(default)]
    pub params: IndexMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outputs: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Map::is_empty")]
    pub metadata: Map<String, Value>,
}

impl PlanStep {
    fn new(role: StepRole) -> Self {
        PlanStep {
            step_idx: 0,
            role,
            subgoal: None,
            tools: Vec::new(),
            params: IndexMap::new(),
            outputs: None,
            metadata: Map::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialoguePlan {
    pub id: String,
    pub goal: GoalRecord,
    /// The executed path: the workflow path, or decision tool plus the chosen
    /// branch for conditional workflows.
    pub tool_path: Vec<String>,
    pub partitions: Vec<Vec<String>>,
    pub steps: Vec<PlanStep>,
    pub p_clar: f64,
    pub seed: u64,
    #[serde(default)]
    pub metadata: Map<String, Value>,
}

impl DialoguePlan {
    pub fn call_steps(&self) -> impl Iterator<Item = &PlanStep> {
        self.steps.iter().filter(|s| s.role == StepRole::CallTool)
    }
}

/// Resolved sources for every planned argument.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamPlan {
    /// `tool.param` → marker, in path then declaration order.
    pub markers: IndexMap<String, Marker>,
    /// Optional parameters left to their defaults or unset.
    pub omitted: Vec<String>,
    /// Parameters with more than one upstream source.
    pub ties: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerSettings {
    pub p_clar: f64,
    /// Also derive arguments from same-named upstream outputs that have no
    /// graph edge.
    pub name_fallback: bool,
    pub temperatures: Temperatures,
}

impl Default for PlannerSettings {
    fn default() -> Self {
        PlannerSettings { p_clar: 0.35, name_fallback: false, temperatures: Temperatures::default() }
    }
}

fn is_contiguous_cover(parts: &[Vec<String>], path: &[String]) -> bool {
    !parts.iter().any(Vec::is_empty) && parts.concat() == path
}

/// Nearest-preceding upstream source per parameter; unresolved required
/// parameters become user-provided, unresolved optional ones are omitted
/// unless the goal mentions them.
pub fn resolve_param_plan(
    partitions: &[Vec<String>],
    graph: &ToolGraph,
    pool: &ToolPool,
    goal_text: &str,
    name_fallback: bool,
) -> Result<ParamPlan, PlanError> {
    let path: Vec<&String> = partitions.iter().flatten().collect();
    let mut plan = ParamPlan::default();
    for (k, name) in path.iter().enumerate() {
        let tool = pool.get(name).ok_or_else(|| PlanError::UnknownTool(name.to_string()))?;
        for (param, schema) in &tool.parameters {
            let key = format!("{name}.{param}");
            let mut sources: Vec<(usize, Marker)> = Vec::new();
            for (j, up) in path[..k].iter().enumerate() {
                if let Some(e) = graph.edges_between(up, name).find(|e| e.input_name == *param) {
                    sources.push((j, Marker::output(up, &e.output_name)));
                } else if name_fallback && pool.get(up).is_some_and(|u| flatten_output_names(u).contains(param)) {
                    sources.push((j, Marker::output(up, param)));
                }
            }
            if sources.len() > 1 {
                plan.ties.push(key.clone());
                log::debug!("{key} has {} upstream sources; nearest wins", sources.len());
            }
            if let Some((_, m)) = sources.into_iter().max_by_key(|(j, _)| *j) {
                plan.markers.insert(key, m);
            } else if tool.is_required(param)
                || (schema.default_value.is_none()
                    && contains_token(&goal_text.to_lowercase(), &humanize(param).to_lowercase()))
            {
                plan.markers.insert(key, Marker::user(name, param));
            } else {
                plan.omitted.push(key);
            }
        }
    }
    Ok(plan)
}

pub struct Planner<'a> {
    gateway: &'a Gateway,
    settings: PlannerSettings,
}

impl<'a> Planner<'a> {
    pub fn new(gateway: &'a Gateway, settings: PlannerSettings) -> Self {
        Planner { gateway, settings }
    }

    pub fn settings(&self) -> &PlannerSettings {
        &self.settings
    }

    /// Segments the executed path. Linear paths ask the model and fall back
    /// to singletons after two invalid answers; fan and conditional paths are
    /// split by rule, with a seeded choice where several splits are valid.
    pub fn partition_tool_path(
        &self,
        goal: &GoalRecord,
        graph: &ToolGraph,
        seed: u64,
    ) -> Result<(Vec<String>, Vec<Vec<String>>), PlanError> {
        let w = &goal.workflow;
        if w.tool_path.is_empty() {
            return Err(PlanError::EmptyPath);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["partition"]));
        match (w.pattern_type, &w.fan_branches, &w.decision) {
            (PatternType::Fan, Some(f), _) => {
                let k = f.parallel.len();
                let split = rng.gen_range(0..=k);
                let mut first = vec![f.start.clone()];
                first.extend(f.parallel[..split].iter().cloned());
                let mut second: Vec<String> = f.parallel[split..].to_vec();
                second.push(f.merge.clone());
                let path = [first.clone(), second.clone()].concat();
                Ok((path, vec![first, second]))
            }
            (PatternType::Conditional, _, Some(d)) => {
                let chosen = goal
                    .metadata
                    .get("decision_value")
                    .and_then(Value::as_str)
                    .and_then(|v| d.branches.get(v))
                    .cloned()
                    .unwrap_or_else(|| {
                        let values: Vec<&String> = d.branches.keys().collect();
                        d.branches[values[rng.gen_range(0..values.len())]].clone()
                    });
                let part = vec![d.tool.clone(), chosen];
                Ok((part.clone(), vec![part]))
            }
            _ => {
                let path = w.tool_path.clone();
                let mut deps = Vec::new();
                for i in 0..path.len() {
                    for j in i + 1..path.len() {
                        if graph.has_edge(&path[i], &path[j]) {
                            deps.push(json!([i, j]));
                        }
                    }
                }
                for attempt in 0..2 {
                    let mut input = json!({"tools": path, "dependencies": deps, "goal": goal.goal_text});
                    if attempt > 0 {
                        input["attempt"] = json!(attempt);
                    }
                    let req = prompts::json_request(
                        prompts::TASK_PARTITION_PATH,
                        prompts::PARTITION_INSTRUCTIONS,
                        &input,
                        self.settings.temperatures.planning,
                    );
                    let parts: Option<Vec<Vec<String>>> =
                        match self.gateway.complete_structured(&req, &Shape::object(&["partitions"])) {
                            Ok(v) => serde_json::from_value(v["partitions"].clone()).ok(),
                            Err(GatewayError::NoDocument | GatewayError::ShapeMismatch { .. }) => None,
                            Err(e) => return Err(e.into()),
                        };
                    if let Some(p) = parts.filter(|p| is_contiguous_cover(p, &path)) {
                        return Ok((path, p));
                    }
                }
                log::warn!("partitioning failed validation twice; using singletons");
                let singles = path.iter().map(|t| vec![t.clone()]).collect();
                Ok((path, singles))
            }
        }
    }

    fn subgoal(
        &self,
        goal: &GoalRecord,
        part: &[String],
        index: usize,
        previous: &[String],
        optional: &[String],
    ) -> Result<String, PlanError> {
        for attempt in 0..2 {
            let mut input = json!({
                "tools": part,
                "position": if index == 0 { "first" } else { "later" },
                "goal": goal.goal_text,
                "previous_subgoals": previous,
                "optional_params": optional,
            });
            if attempt > 0 {
                input["attempt"] = json!(attempt);
            }
            let req = prompts::json_request(
                prompts::TASK_SUBGOAL,
                prompts::SUBGOAL_INSTRUCTIONS,
                &input,
                self.settings.temperatures.planning,
            );
            match self.gateway.complete_structured(&req, &Shape::object(&["subgoal"])) {
                Ok(v) => {
                    let s = v["subgoal"].as_str().unwrap_or_default().trim().to_string();
                    if !s.is_empty() {
                        return Ok(s);
                    }
                }
                Err(GatewayError::NoDocument | GatewayError::ShapeMismatch { .. }) => {}
                Err(e) => return Err(e.into()),
            }
        }
        Err(PlanError::EmptySubgoal(index))
    }

    /// Emits the step sequence. One seeded Bernoulli draw per required
    /// user-provided parameter, in path and declaration order, decides
    /// whether it is clarified instead of given upfront.
    #[allow(clippy::too_many_arguments)]
    pub fn weave_plan(
        &self,
        id: &str,
        goal: &GoalRecord,
        tool_path: Vec<String>,
        partitions: Vec<Vec<String>>,
        params: &ParamPlan,
        pool: &ToolPool,
        p_clar: f64,
        seed: u64,
    ) -> Result<DialoguePlan, PlanError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = p_clar.clamp(0.0, 1.0);
        let mut steps = Vec::new();
        let mut subgoals: Vec<String> = Vec::new();
        for (pi, part) in partitions.iter().enumerate() {
            let mut upfront = IndexMap::new();
            let mut clarified = IndexMap::new();
            let mut optional_names = Vec::new();
            for t in part {
                let tool = pool.get(t).ok_or_else(|| PlanError::UnknownTool(t.clone()))?;
                for param in tool.parameters.keys() {
                    let key = format!("{t}.{param}");
                    match params.markers.get(&key) {
                        Some(m @ Marker::User { .. }) if tool.is_required(param) => {
                            if rng.gen_bool(p) {
                                clarified.insert(key, m.to_string());
                            } else {
                                upfront.insert(key, m.to_string());
                            }
                        }
                        Some(m @ Marker::User { .. }) => {
                            upfront.insert(key, m.to_string());
                        }
                        Some(_) => {}
                        None => optional_names.push(key),
                    }
                }
            }
            let subgoal = self.subgoal(goal, part, pi, &subgoals, &optional_names)?;
            subgoals.push(subgoal.clone());
            let mut u = PlanStep::new(StepRole::UserUtterance);
            u.subgoal = Some(subgoal);
            u.tools = part.clone();
            u.params = upfront;
            steps.push(u);
            if !clarified.is_empty() {
                let mut tools: Vec<String> = Vec::new();
                for k in clarified.keys() {
                    let t = k.split_once('.').map_or(k.as_str(), |(t, _)| t).to_string();
                    if !tools.contains(&t) {
                        tools.push(t);
                    }
                }
                let mut a = PlanStep::new(StepRole::AssistantClarification);
                a.tools = tools.clone();
                a.params = clarified.clone();
                steps.push(a);
                let mut r = PlanStep::new(StepRole::UserResponseToClarification);
                r.tools = tools;
                r.params = clarified;
                steps.push(r);
            }
            for t in part {
                let tool = pool.get(t).expect("checked above");
                let mut c = PlanStep::new(StepRole::CallTool);
                c.tools = vec![t.clone()];
                for param in tool.parameters.keys() {
                    let key = format!("{t}.{param}");
                    if let Some(m) = params.markers.get(&key) {
                        c.params.insert(key, m.to_string());
                    }
                }
                steps.push(c);
            }
            let mut s = PlanStep::new(StepRole::AssistantResponseTool);
            s.tools = part.clone();
            s.outputs = Some(
                part.iter()
                    .flat_map(|t| {
                        output_leaf_paths(pool.get(t).expect("checked above"))
                            .into_iter()
                            .map(move |o| format!("{t}.{o}"))
                    })
                    .collect(),
            );
            steps.push(s);
        }
        for (i, s) in steps.iter_mut().enumerate() {
            s.step_idx = i + 1;
        }
        let mut metadata = Map::new();
        if !params.omitted.is_empty() {
            metadata.insert("omitted_params".into(), json!(params.omitted));
        }
        if !params.ties.is_empty() {
            metadata.insert("provenance_ties".into(), json!(params.ties));
        }
        Ok(DialoguePlan {
            id: id.to_string(),
            goal: goal.clone(),
            tool_path,
            partitions,
            steps,
            p_clar: p,
            seed,
            metadata,
        })
    }

    /// Partition, resolve and weave in one call.
    pub fn compile(
        &self,
        id: &str,
        goal: &GoalRecord,
        graph: &ToolGraph,
        seed: u64,
    ) -> Result<DialoguePlan, PlanError> {
        let (path, parts) = self.partition_tool_path(goal, graph, seed)?;
        let params = resolve_param_plan(&parts, graph, &graph.nodes, &goal.goal_text, self.settings.name_fallback)?;
        self.weave_plan(id, goal, path, parts, &params, &graph.nodes, self.settings.p_clar, seed)
    }
}

fn violation(path: String, kind: ViolationKind, message: impl Into<String>) -> Violation {
    Violation { path, kind, message: message.into() }
}

/// Checks ordering, coverage, provenance and clarification pairing.
pub fn validate_plan(plan: &DialoguePlan, pool: &ToolPool) -> ValidationReport {
    let mut v = Vec::new();
    for (i, s) in plan.steps.iter().enumerate() {
        if s.step_idx != i + 1 {
            v.push(violation(
                format!("steps[{i}]"),
                ViolationKind::StepOrder,
                format!("step_idx {} at position {}", s.step_idx, i + 1),
            ));
        }
    }
    if plan.partitions.iter().any(Vec::is_empty) || plan.partitions.concat() != plan.tool_path {
        v.push(violation(
            "partitions".into(),
            ViolationKind::PartitionCoverage,
            "partitions do not concatenate to the tool path",
        ));
    }
    let calls: Vec<&String> = plan.call_steps().filter_map(|s| s.tools.first()).collect();
    if calls.len() != plan.tool_path.len() || calls.iter().zip(&plan.tool_path).any(|(a, b)| *a != b) {
        v.push(violation("steps".into(), ViolationKind::PartitionCoverage, "tool calls do not follow the tool path"));
    }
    let mut called_at: HashMap<&str, usize> = HashMap::new();
    let mut provided: BTreeSet<String> = BTreeSet::new();
    for (i, s) in plan.steps.iter().enumerate() {
        let here = format!("steps[{i}]");
        match s.role {
            StepRole::AssistantClarification => {
                let next = plan.steps.get(i + 1);
                let paired = next.is_some_and(|n| {
                    n.role == StepRole::UserResponseToClarification
                        && n.params.keys().collect::<BTreeSet<_>>() == s.params.keys().collect::<BTreeSet<_>>()
                });
                if !paired {
                    v.push(violation(
                        here.clone(),
                        ViolationKind::ClarificationPairing,
                        "clarification is not answered by the next step",
                    ));
                }
            }
            StepRole::UserResponseToClarification => {
                let prev_ok = i > 0 && plan.steps[i - 1].role == StepRole::AssistantClarification;
                if !prev_ok {
                    v.push(violation(
                        here.clone(),
                        ViolationKind::ClarificationPairing,
                        "answer without a preceding clarification",
                    ));
                }
            }
            _ => {}
        }
        match s.role {
            StepRole::UserUtterance | StepRole::UserResponseToClarification => {
                for (k, m) in &s.params {
                    match Marker::parse(m) {
                        Some(Marker::User { tool, param }) if format!("{tool}.{param}") == *k => {
                            if !provided.insert(k.clone()) {
                                v.push(violation(
                                    format!("{here}.params.{k}"),
                                    ViolationKind::ClarificationPairing,
                                    "parameter provided twice",
                                ));
                            }
                        }
                        _ => v.push(violation(
                            format!("{here}.params.{k}"),
                            ViolationKind::BadMarker,
                            format!("{m} is not a user marker for {k}"),
                        )),
                    }
                }
            }
            StepRole::CallTool => {
                if s.tools.len() != 1 {
                    v.push(violation(here.clone(), ViolationKind::StepOrder, "a tool call names exactly one tool"));
                    continue;
                }
                let name = &s.tools[0];
                let Some(tool) = pool.get(name) else {
                    v.push(violation(here.clone(), ViolationKind::UnknownTool, format!("unknown tool {name}")));
                    continue;
                };
                for req in &tool.required {
                    if !s.params.contains_key(&format!("{name}.{req}")) {
                        v.push(violation(
                            format!("{here}.params"),
                            ViolationKind::MissingRequired,
                            format!("{name}.{req} has no source"),
                        ));
                    }
                }
                for (k, m) in &s.params {
                    let path = format!("{here}.params.{k}");
                    let param_ok = k.split_once('.').is_some_and(|(t, p)| t == name && tool.parameters.contains_key(p));
                    if !param_ok {
                        v.push(violation(
                            path.clone(),
                            ViolationKind::UnknownParam,
                            format!("{k} is not a parameter of {name}"),
                        ));
                    }
                    match Marker::parse(m) {
                        None => v.push(violation(path, ViolationKind::BadMarker, format!("unparseable marker {m}"))),
                        Some(Marker::User { tool: t, param: p }) => {
                            if format!("{t}.{p}") != *k {
                                v.push(violation(path, ViolationKind::BadMarker, format!("{m} does not match {k}")));
                            } else if !provided.contains(k) {
                                v.push(violation(
                                    path,
                                    ViolationKind::UnprovidedParam,
                                    format!("{k} is used before the user provides it"),
                                ));
                            }
                        }
                        Some(Marker::Output { tool: up, output }) => match called_at.get(up.as_str()) {
                            None => v.push(violation(
                                path,
                                ViolationKind::ForwardReference,
                                format!("{up} is not called before step {}", s.step_idx),
                            )),
                            Some(_) => {
                                if !pool.get(&up).is_some_and(|u| flatten_output_names(u).contains(&output)) {
                                    v.push(violation(
                                        path,
                                        ViolationKind::UnknownOutput,
                                        format!("{up} has no output {output}"),
                                    ));
                                }
                            }
                        },
                    }
                }
                called_at.insert(name.as_str(), i);
            }
            StepRole::AssistantResponseTool => {
                for t in &s.tools {
                    if !called_at.contains_key(t.as_str()) {
                        v.push(violation(
                            here.clone(),
                            ViolationKind::ForwardReference,
                            format!("summary of {t} before its call"),
                        ));
                    }
                }
            }
            StepRole::AssistantClarification => {}
        }
    }
    ValidationReport::from_violations(v)
}
