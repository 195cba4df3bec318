//! Plan-driven dialogue realization with user, assistant and tool agents
//! sharing a structured memory.

use std::collections::BTreeSet;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::gateway::{Gateway, GatewayError, Shape};
use crate::planner::{validate_plan, DialoguePlan, Marker, PlanStep, StepRole};
use crate::prompts::{self, Temperatures};
use crate::schema::{
    flatten_output_params, validate_call_args, validate_result, validate_value, ParamSchema, ToolPool, ToolSpec,
    TypeTag, ValidationReport,
};
use crate::util::derive_seed;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("plan failed validation: {0:?}")]
    InvalidPlan(ValidationReport),
    #[error("marker {0} is unresolved at call time")]
    UnresolvedMarker(String),
    #[error("user agent failed: {0}")]
    UserAgent(String),
    #[error("tool call for {tool} rejected: {message}")]
    ToolCall { tool: String, message: String },
    #[error("tool agent failed for {tool}: {message}")]
    ToolAgent { tool: String, message: String },
    #[error("assistant agent failed: {0}")]
    Assistant(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnKind {
    System,
    User,
    AssistantText,
    AssistantToolCall,
    ToolResponse,
}

impl TurnKind {
    pub fn role(self) -> &'static str {
        match self {
            TurnKind::System => "system",
            TurnKind::User => "user",
            TurnKind::AssistantText | TurnKind::AssistantToolCall => "assistant",
            TurnKind::ToolResponse => "tool",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub role: String,
    pub content: String,
    pub kind: TurnKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub args: Option<Map<String, Value>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Map<String, Value>>,
    pub plan_step_idx: usize,
    #[serde(default, skip_serializing_if = "Map::is_empty")]
    pub meta: Map<String, Value>,
}

impl Turn {
    pub fn text(kind: TurnKind, content: impl Into<String>, step: usize) -> Self {
        Turn {
            role: kind.role().into(),
            content: content.into(),
            kind,
            tool_name: None,
            args: None,
            result: None,
            plan_step_idx: step,
            meta: Map::new(),
        }
    }

    pub fn call(tool: &str, args: Map<String, Value>, step: usize) -> Self {
        Turn {
            content: call_text(tool, &args),
            tool_name: Some(tool.into()),
            args: Some(args),
            ..Turn::text(TurnKind::AssistantToolCall, "", step)
        }
    }

    pub fn response(tool: &str, result: Map<String, Value>, step: usize) -> Self {
        Turn {
            content: Value::Object(result.clone()).to_string(),
            tool_name: Some(tool.into()),
            result: Some(result),
            ..Turn::text(TurnKind::ToolResponse, "", step)
        }
    }

    /// Plan role that produced this turn, when recorded.
    pub fn act(&self) -> Option<&str> {
        self.meta.get("act").and_then(Value::as_str)
    }
}

/// `name({compact args})`.
pub fn call_text(tool: &str, args: &Map<String, Value>) -> String {
    format!("{tool}({})", Value::Object(args.clone()))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DialogueTranscript {
    pub id: String,
    pub plan_ref: String,
    pub seed: u64,
    pub domain: String,
    pub goal_text: String,
    pub tools: Vec<ToolSpec>,
    pub conversations: Vec<Turn>,
    #[serde(default)]
    pub modified: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub injection_mode: Option<String>,
    /// Original tool name → masked name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masking: Option<IndexMap<String, String>>,
}

impl DialogueTranscript {
    pub fn tool_calls(&self) -> impl Iterator<Item = &Turn> {
        self.conversations.iter().filter(|t| t.kind == TurnKind::AssistantToolCall)
    }

    pub fn declared(&self, tool: &str) -> Option<&ToolSpec> {
        self.tools.iter().find(|t| t.name == tool)
    }

    /// Structural invariants: nonempty, user first after system turns,
    /// responses right after their calls, step indices non-decreasing.
    pub fn check(&self) -> Result<(), String> {
        let first = self.conversations.iter().find(|t| t.kind != TurnKind::System).ok_or("transcript has no turns")?;
        if first.kind != TurnKind::User {
            return Err("first non-system turn is not a user turn".into());
        }
        for (i, t) in self.conversations.iter().enumerate() {
            match t.kind {
                TurnKind::AssistantToolCall if t.tool_name.is_none() || t.args.is_none() => {
                    return Err(format!("turn {i}: call without name or args"))
                }
                TurnKind::ToolResponse => {
                    let prev = i.checked_sub(1).map(|p| &self.conversations[p]);
                    if t.result.is_none()
                        || !prev.is_some_and(|p| p.kind == TurnKind::AssistantToolCall && p.tool_name == t.tool_name)
                    {
                        return Err(format!("turn {i}: response does not follow its call"));
                    }
                }
                _ => {}
            }
            if i > 0 && self.conversations[i - 1].plan_step_idx > t.plan_step_idx {
                return Err(format!("turn {i}: plan_step_idx decreases"));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("transcript serializes")
    }
}

/// Structured dialogue state.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MemoryState {
    /// Marker string → value the user gave.
    pub resolved_params: IndexMap<String, Value>,
    /// `tool.output` (bare output name) → latest value.
    pub tool_outputs: IndexMap<String, Value>,
    pub facts: Vec<String>,
    /// Values displaced when a tool was called again.
    pub archived: Vec<(String, Value)>,
}

impl MemoryState {
    /// Every scalar value in memory, rendered as text.
    pub fn known_values(&self) -> Vec<Value> {
        let mut out = Vec::new();
        for v in self.resolved_params.values().chain(self.tool_outputs.values()) {
            collect_scalars(v, &mut out);
        }
        out
    }

    /// Bare output name → latest value over every called tool.
    pub fn outputs_by_name(&self) -> Map<String, Value> {
        let mut m = Map::new();
        for (k, v) in &self.tool_outputs {
            if let Some((_, bare)) = k.split_once('.') {
                m.insert(bare.to_string(), v.clone());
            }
        }
        m
    }

    /// Bare name → value over resolved user parameters and tool outputs,
    /// outputs taking precedence.
    pub fn known_by_name(&self) -> Map<String, Value> {
        let mut m = Map::new();
        for (marker, v) in &self.resolved_params {
            if let Some((_, bare)) = marker.rsplit_once('.') {
                m.insert(bare.to_string(), v.clone());
            }
        }
        m.extend(self.outputs_by_name());
        m
    }
}

pub(crate) fn collect_scalars(v: &Value, out: &mut Vec<Value>) {
    match v {
        Value::Array(a) => a.iter().for_each(|x| collect_scalars(x, out)),
        Value::Object(o) => o.values().for_each(|x| collect_scalars(x, out)),
        Value::Null => {}
        other => out.push(other.clone()),
    }
}

/// Binds every property of a tool result under its bare name: top-level
/// names first, then nested names not already bound, reading the first
/// element of arrays.
pub fn bind_result(tool: &str, result: &Map<String, Value>) -> IndexMap<String, Value> {
    fn nested(obj: &Map<String, Value>, tool: &str, out: &mut IndexMap<String, Value>) {
        for (k, v) in obj {
            out.entry(format!("{tool}.{k}")).or_insert_with(|| v.clone());
            let inner = match v {
                Value::Object(o) => Some(o),
                Value::Array(a) => a.first().and_then(Value::as_object),
                _ => None,
            };
            if let Some(o) = inner {
                nested(o, tool, out);
            }
        }
    }
    let mut out: IndexMap<String, Value> = result.iter().map(|(k, v)| (format!("{tool}.{k}"), v.clone())).collect();
    nested(result, tool, &mut out);
    out
}

/// Applies one realized step to memory.
pub fn update_memory(memory: &mut MemoryState, step: &PlanStep, turn: &Turn) {
    match turn.kind {
        TurnKind::User => {
            if let Some(values) = turn.meta.get("values").and_then(Value::as_object) {
                for (key, v) in values {
                    if let Some(marker) = step.params.get(key) {
                        memory.resolved_params.insert(marker.clone(), v.clone());
                    }
                }
            }
        }
        TurnKind::ToolResponse => {
            let (Some(tool), Some(result)) = (&turn.tool_name, &turn.result) else {
                return;
            };
            let prefix = format!("{tool}.");
            let stale: Vec<String> = memory.tool_outputs.keys().filter(|k| k.starts_with(&prefix)).cloned().collect();
            for k in stale {
                if let Some(v) = memory.tool_outputs.shift_remove(&k) {
                    memory.archived.push((k, v));
                }
            }
            memory.tool_outputs.extend(bind_result(tool, result));
        }
        TurnKind::AssistantText => memory.facts.push(turn.content.clone()),
        _ => {}
    }
}

/// Value at a leaf path such as `tickets[].ticket_id`, reading first elements.
pub fn value_at_path<'a>(result: &'a Map<String, Value>, path: &str) -> Option<&'a Value> {
    let mut parts = path.split('.');
    let first = parts.next()?;
    let mut cur = result.get(first.trim_end_matches("[]"))?;
    if first.ends_with("[]") {
        cur = cur.as_array()?.first()?;
    }
    for p in parts {
        cur = cur.get(p.trim_end_matches("[]"))?;
        if p.ends_with("[]") {
            cur = cur.as_array()?.first()?;
        }
    }
    Some(cur)
}

pub fn render_value(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Coerces numeric strings and numeric-looking booleans toward the schema type.
fn coerce(schema: &ParamSchema, v: Value) -> Value {
    match (schema.type_tag, &v) {
        (TypeTag::Integer, Value::String(s)) => s.trim().parse::<i64>().map(Value::from).unwrap_or(v),
        (TypeTag::Number, Value::String(s)) => s.trim().parse::<f64>().map(Value::from).unwrap_or(v),
        (TypeTag::Boolean, Value::String(s)) => match s.trim() {
            "true" => Value::Bool(true),
            "false" => Value::Bool(false),
            _ => v,
        },
        _ => v,
    }
}

/// Fixed-format clock line, seeded.
pub fn seeded_clock(seed: u64) -> (String, String) {
    let h = derive_seed(seed, &["clock"]);
    let day = 1 + h % 28;
    let hh = (h >> 8) % 24;
    let mm = (h >> 16) % 60;
    let ss = (h >> 24) % 60;
    (format!("2025-08-{day:02} {hh:02}:{mm:02}:{ss:02}"), format!("2025-08-{day:02}T{hh:02}:{mm:02}:{ss:02}Z"))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineSettings {
    pub temperatures: Temperatures,
}

pub struct Engine<'a> {
    gateway: &'a Gateway,
    settings: EngineSettings,
}

fn is_parse(e: &GatewayError) -> bool {
    matches!(e, GatewayError::NoDocument | GatewayError::ShapeMismatch { .. })
}

struct Run<'p> {
    plan: &'p DialoguePlan,
    pool: &'p ToolPool,
    seed: u64,
    clock_iso: String,
    memory: MemoryState,
    turns: Vec<Turn>,
    last_results: IndexMap<String, Map<String, Value>>,
    call_index: usize,
}

impl<'a> Engine<'a> {
    pub fn new(gateway: &'a Gateway, settings: EngineSettings) -> Self {
        Engine { gateway, settings }
    }

    /// Realizes every plan step in order and returns the transcript together
    /// with the final memory.
    pub fn synthesize_dialogue(
        &self,
        plan: &DialoguePlan,
        pool: &ToolPool,
        seed: u64,
    ) -> Result<(DialogueTranscript, MemoryState), EngineError> {
        let report = validate_plan(plan, pool);
        if !report.ok {
            return Err(EngineError::InvalidPlan(report));
        }
        let (clock_text, clock_iso) = seeded_clock(seed);
        let mut run = Run {
            plan,
            pool,
            seed,
            clock_iso,
            memory: MemoryState::default(),
            turns: vec![Turn::text(TurnKind::System, format!("Current time: {clock_text}."), 0)],
            last_results: IndexMap::new(),
            call_index: 0,
        };
        for (si, step) in plan.steps.iter().enumerate() {
            let turn = match step.role {
                StepRole::UserUtterance | StepRole::UserResponseToClarification => self.user_step(&run, step)?,
                StepRole::AssistantClarification => self.clarify_step(step)?,
                StepRole::CallTool => {
                    let call = self.call_step(&run, step)?;
                    let tool = call.tool_name.clone().expect("calls carry a name");
                    run.memory.facts.push(call.content.clone());
                    let args = call.args.clone().expect("calls carry args");
                    run.turns.push(call);
                    let pending = pending_user_values(&run, si);
                    let narrow = downstream_enums(plan, pool, si, &tool);
                    let result = self.simulate_tool_response(
                        pool.get(&tool).expect("validated plan"),
                        &args,
                        &run.memory,
                        &pending,
                        &narrow,
                        &run.clock_iso,
                        run.call_index,
                        run.seed,
                    )?;
                    run.call_index += 1;
                    run.last_results.insert(tool.clone(), result.clone());
                    Turn::response(&tool, result, step.step_idx)
                }
                StepRole::AssistantResponseTool => self.summary_step(&run, step)?,
            };
            update_memory(&mut run.memory, step, &turn);
            run.turns.push(turn);
        }
        let mut tools: Vec<ToolSpec> = Vec::new();
        for name in &plan.tool_path {
            if !tools.iter().any(|t| &t.name == name) {
                tools.push(pool.get(name).expect("validated plan").clone());
            }
        }
        let t = DialogueTranscript {
            id: format!("{}-d", plan.id),
            plan_ref: plan.id.clone(),
            seed,
            domain: pool.domain.clone(),
            goal_text: plan.goal.goal_text.clone(),
            tools,
            conversations: run.turns,
            modified: false,
            injection_mode: None,
            masking: None,
        };
        Ok((t, run.memory))
    }

    fn user_step(&self, run: &Run<'_>, step: &PlanStep) -> Result<Turn, EngineError> {
        let mut params = Vec::new();
        let mut schemas: IndexMap<String, ParamSchema> = IndexMap::new();
        for key in step.params.keys() {
            let (tool, param) = key.split_once('.').ok_or_else(|| EngineError::UserAgent(format!("bad key {key}")))?;
            let schema = run
                .pool
                .get(tool)
                .and_then(|t| t.parameters.get(param))
                .ok_or_else(|| EngineError::UserAgent(format!("unknown parameter {key}")))?;
            params.push(json!({"key": key, "schema": schema.to_value()}));
            schemas.insert(key.clone(), schema.clone());
        }
        let act = match step.role {
            StepRole::UserUtterance => "USER_UTTERANCE",
            _ => "USER_RESPONSE_TO_CLARIFICATION",
        };
        let mut last_problem = String::new();
        for attempt in 0..2 {
            let mut input = json!({
                "act": act,
                "subgoal": step.subgoal.clone().unwrap_or_default(),
                "params": params,
                "known_values": run.memory.known_values(),
                "seed": derive_seed(run.seed, &["user", &step.step_idx.to_string()]),
            });
            if attempt > 0 {
                input["attempt"] = json!(attempt);
                input["problem"] = json!(last_problem);
            }
            let req = prompts::structured_request(
                prompts::SYSTEM_USER_AGENT,
                prompts::TASK_USER_TURN,
                prompts::USER_TURN_INSTRUCTIONS,
                &input,
                self.settings.temperatures.user_agent,
            );
            let reply = match self.gateway.complete_structured(&req, &Shape::object(&["utterance"])) {
                Ok(v) => v,
                Err(e) if is_parse(&e) => {
                    last_problem = e.to_string();
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            let utterance = reply["utterance"].as_str().unwrap_or_default().trim().to_string();
            let given = reply.get("values").and_then(Value::as_object).cloned().unwrap_or_default();
            let mut values = Map::new();
            let mut problem = None;
            for (key, schema) in &schemas {
                let Some(v) = given.get(key).cloned().map(|v| coerce(schema, v)) else {
                    problem = Some(format!("no value for {key}"));
                    break;
                };
                if !validate_value(schema, &v).ok {
                    problem = Some(format!("value for {key} does not fit its schema"));
                    break;
                }
                if !utterance.contains(&render_value(&v)) {
                    problem = Some(format!("value for {key} is not stated verbatim"));
                    break;
                }
                values.insert(key.clone(), v);
            }
            if utterance.is_empty() {
                problem = Some("empty utterance".into());
            }
            match problem {
                None => {
                    let mut t = Turn::text(TurnKind::User, utterance, step.step_idx);
                    t.meta.insert("act".into(), json!(act));
                    if !values.is_empty() {
                        t.meta.insert("values".into(), Value::Object(values));
                    }
                    return Ok(t);
                }
                Some(p) => last_problem = p,
            }
        }
        Err(EngineError::UserAgent(last_problem))
    }

    fn clarify_step(&self, step: &PlanStep) -> Result<Turn, EngineError> {
        let keys: Vec<&String> = step.params.keys().collect();
        let req = prompts::structured_request(
            prompts::SYSTEM_ASSISTANT_AGENT,
            prompts::TASK_CLARIFY,
            prompts::CLARIFY_INSTRUCTIONS,
            &json!({"params": keys}),
            self.settings.temperatures.assistant_agent,
        );
        let v = self.gateway.complete_structured(&req, &Shape::object(&["utterance"])).map_err(|e| {
            if is_parse(&e) {
                EngineError::Assistant(e.to_string())
            } else {
                e.into()
            }
        })?;
        let text = v["utterance"].as_str().unwrap_or_default().trim().to_string();
        if text.is_empty() {
            return Err(EngineError::Assistant("empty clarification".into()));
        }
        let mut t = Turn::text(TurnKind::AssistantText, text, step.step_idx);
        t.meta.insert("act".into(), json!("ASSISTANT_CLARIFICATION"));
        Ok(t)
    }

    fn bound_args(run: &Run<'_>, step: &PlanStep) -> Result<Map<String, Value>, EngineError> {
        let mut bound = Map::new();
        for (key, marker) in &step.params {
            let param = key.split_once('.').map_or(key.as_str(), |(_, p)| p);
            let value = match Marker::parse(marker) {
                Some(Marker::User { .. }) => run.memory.resolved_params.get(marker),
                Some(Marker::Output { tool, output }) => run.memory.tool_outputs.get(&format!("{tool}.{output}")),
                None => None,
            };
            let v = value.ok_or_else(|| EngineError::UnresolvedMarker(marker.clone()))?;
            bound.insert(param.to_string(), v.clone());
        }
        Ok(bound)
    }

    fn call_step(&self, run: &Run<'_>, step: &PlanStep) -> Result<Turn, EngineError> {
        let name = &step.tools[0];
        let tool = run.pool.get(name).expect("validated plan");
        let bound = Self::bound_args(run, step)?;
        let mut last = String::new();
        for attempt in 0..2 {
            let mut input = json!({"tool": name, "schema": tool.to_value(), "bound_args": bound});
            if attempt > 0 {
                input["attempt"] = json!(attempt);
                input["problem"] = json!(last);
            }
            let req = prompts::structured_request(
                prompts::SYSTEM_ASSISTANT_AGENT,
                prompts::TASK_TOOL_CALL,
                prompts::TOOL_CALL_INSTRUCTIONS,
                &input,
                self.settings.temperatures.assistant_agent,
            );
            let reply = match self.gateway.complete_structured(&req, &Shape::object(&["name", "arguments"])) {
                Ok(v) => v,
                Err(e) if is_parse(&e) => {
                    last = e.to_string();
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            if reply["name"].as_str() != Some(name.as_str()) {
                last = format!("called {} instead of {name}", reply["name"]);
                continue;
            }
            let mut args = Map::new();
            for p in tool.parameters.keys() {
                if let Some(v) = bound.get(p).or_else(|| reply["arguments"].get(p)) {
                    args.insert(p.clone(), v.clone());
                }
            }
            if let Some(extra) =
                reply["arguments"].as_object().and_then(|o| o.keys().find(|k| !tool.parameters.contains_key(*k)))
            {
                last = format!("unknown argument {extra}");
                continue;
            }
            let report = validate_call_args(tool, &args);
            if report.ok {
                return Ok(Turn::call(name, args, step.step_idx));
            }
            last = format!("{:?}", report.kinds());
        }
        Err(EngineError::ToolCall { tool: name.clone(), message: last })
    }

    /// Schema-conforming result from the tool agent, regenerated once when
    /// validation fails.
    #[allow(clippy::too_many_arguments)]
    pub fn simulate_tool_response(
        &self,
        tool: &ToolSpec,
        args: &Map<String, Value>,
        memory: &MemoryState,
        avoid: &[Value],
        narrow: &IndexMap<String, Vec<String>>,
        clock: &str,
        call_index: usize,
        seed: u64,
    ) -> Result<Map<String, Value>, EngineError> {
        if tool.results.is_empty() {
            return Ok(Map::new());
        }
        let mut last = String::new();
        for attempt in 0..2 {
            let mut input = json!({
                "tool": tool.to_value(),
                "arguments": args,
                "known": memory.known_by_name(),
                "avoid": avoid,
                "constraints": narrow,
                "clock": clock,
                "call_index": call_index,
                "seed": seed,
            });
            if attempt > 0 {
                input["attempt"] = json!(attempt);
                input["problem"] = json!(last);
            }
            let req = prompts::structured_request(
                prompts::SYSTEM_TOOL_AGENT,
                prompts::TASK_TOOL_RESPONSE,
                prompts::TOOL_RESPONSE_INSTRUCTIONS,
                &input,
                self.settings.temperatures.tool_agent,
            );
            let reply = match self.gateway.complete_structured(&req, &Shape::object(&["result"])) {
                Ok(v) => v,
                Err(e) if is_parse(&e) => {
                    last = e.to_string();
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            let Some(result) = reply["result"].as_object() else {
                last = "result is not an object".into();
                continue;
            };
            let report = validate_result(tool, result);
            if !report.ok {
                last = format!("{:?}", report.kinds());
                continue;
            }
            match narrow_violation(result, narrow) {
                None => return Ok(result.clone()),
                Some(field) => last = format!("{field} must be one of {:?}", narrow[&field]),
            }
        }
        Err(EngineError::ToolAgent { tool: tool.name.clone(), message: last })
    }

    fn summary_step(&self, run: &Run<'_>, step: &PlanStep) -> Result<Turn, EngineError> {
        let mut outputs = Vec::new();
        for path in step.outputs.iter().flatten() {
            let Some((tool, leaf)) = path.split_once('.') else {
                continue;
            };
            if let Some(v) = run.last_results.get(tool).and_then(|r| value_at_path(r, leaf)) {
                outputs.push(json!({"path": path, "value": v}));
            }
        }
        let req = prompts::structured_request(
            prompts::SYSTEM_ASSISTANT_AGENT,
            prompts::TASK_SUMMARIZE,
            prompts::SUMMARIZE_INSTRUCTIONS,
            &json!({"outputs": outputs}),
            self.settings.temperatures.assistant_agent,
        );
        let v = self.gateway.complete_structured(&req, &Shape::object(&["utterance"])).map_err(|e| {
            if is_parse(&e) {
                EngineError::Assistant(e.to_string())
            } else {
                e.into()
            }
        })?;
        let mut t =
            Turn::text(TurnKind::AssistantText, v["utterance"].as_str().unwrap_or_default().trim(), step.step_idx);
        t.meta.insert("act".into(), json!("ASSISTANT_RESPONSE_TOOL"));
        Ok(t)
    }
}

/// Output fields of `tool` that later calls consume as enum-typed inputs,
/// keyed by leaf name, with the values those inputs accept.
fn downstream_enums(
    plan: &DialoguePlan,
    pool: &ToolPool,
    step_pos: usize,
    tool: &str,
) -> IndexMap<String, Vec<String>> {
    let mut out: IndexMap<String, Vec<String>> = IndexMap::new();
    for s in plan.steps[step_pos + 1..].iter().filter(|s| s.role == StepRole::CallTool) {
        for (key, marker) in &s.params {
            let Some(Marker::Output { tool: src, output }) = Marker::parse(marker) else {
                continue;
            };
            let Some((target, param)) = key.split_once('.') else {
                continue;
            };
            if src != tool {
                continue;
            }
            let Some(allowed) =
                pool.get(target).and_then(|t| t.parameters.get(param)).and_then(|p| p.enum_values.clone())
            else {
                continue;
            };
            let leaf = output.rsplit(['.', ']']).next().unwrap_or(&output).to_string();
            let own: Option<Vec<String>> = pool.get(tool).and_then(|t| {
                flatten_output_params(t).into_iter().find(|(n, _)| *n == leaf).and_then(|(_, p)| p.enum_values.clone())
            });
            let entry = out.entry(leaf).or_insert(allowed.clone());
            entry.retain(|v| allowed.contains(v) && own.as_ref().is_none_or(|o| o.contains(v)));
        }
    }
    out
}

/// First constrained field whose value falls outside its allowed set.
fn narrow_violation(result: &Map<String, Value>, narrow: &IndexMap<String, Vec<String>>) -> Option<String> {
    fn walk(v: &Value, narrow: &IndexMap<String, Vec<String>>) -> Option<String> {
        match v {
            Value::Object(m) => m.iter().find_map(|(k, x)| {
                let bad = match (narrow.get(k), x) {
                    (Some(allowed), Value::String(s)) => !allowed.is_empty() && !allowed.contains(s),
                    _ => false,
                };
                if bad {
                    Some(k.clone())
                } else {
                    walk(x, narrow)
                }
            }),
            Value::Array(a) => a.iter().find_map(|x| walk(x, narrow)),
            _ => None,
        }
    }
    walk(&Value::Object(result.clone()), narrow)
}

/// User-provided values of later calls in the current partition; fresh tool
/// outputs must not coincide with them.
fn pending_user_values(run: &Run<'_>, step_pos: usize) -> Vec<Value> {
    let steps = &run.plan.steps;
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for s in &steps[step_pos + 1..] {
        match s.role {
            StepRole::CallTool => {
                for m in s.params.values() {
                    if m.starts_with(crate::planner::USER_MARKER_PREFIX) && seen.insert(m.clone()) {
                        if let Some(v) = run.memory.resolved_params.get(m) {
                            collect_scalars(v, &mut out);
                        }
                    }
                }
            }
            StepRole::AssistantResponseTool => break,
            _ => {}
        }
    }
    out
}

/// A call turn and its response turn, by index into the conversation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CallSite {
    pub call: usize,
    pub response: Option<usize>,
}

impl CallSite {
    pub fn tool<'t>(&self, turns: &'t [Turn]) -> &'t str {
        turns[self.call].tool_name.as_deref().unwrap_or_default()
    }

    pub fn args<'t>(&self, turns: &'t [Turn]) -> Option<&'t Map<String, Value>> {
        turns[self.call].args.as_ref()
    }

    pub fn result<'t>(&self, turns: &'t [Turn]) -> Option<&'t Map<String, Value>> {
        self.response.and_then(|r| turns[r].result.as_ref())
    }
}

pub fn is_injected(t: &Turn) -> bool {
    t.meta.get("injected").and_then(Value::as_bool).unwrap_or(false)
}

/// Call sites in order; injected turns are skipped unless `with_injected`.
pub fn call_sites(turns: &[Turn], with_injected: bool) -> Vec<CallSite> {
    let mut out = Vec::new();
    for (i, t) in turns.iter().enumerate() {
        if t.kind != TurnKind::AssistantToolCall || (!with_injected && is_injected(t)) {
            continue;
        }
        let response =
            turns.get(i + 1).filter(|r| r.kind == TurnKind::ToolResponse && r.tool_name == t.tool_name).map(|_| i + 1);
        out.push(CallSite { call: i, response });
    }
    out
}

/// Scalars of a value, including those nested in arrays and objects.
pub fn scalars(v: &Value) -> Vec<Value> {
    let mut out = Vec::new();
    collect_scalars(v, &mut out);
    out
}

/// Argument names of `later` whose value appears in the result of
/// `earlier` without merely echoing one of `earlier`'s own arguments.
pub fn dependent_args(turns: &[Turn], earlier: &CallSite, later: &CallSite) -> Vec<String> {
    let (Some(result), Some(args)) = (earlier.result(turns), later.args(turns)) else {
        return Vec::new();
    };
    let produced = scalars(&Value::Object(result.clone()));
    let echoed = earlier.args(turns).map(|a| scalars(&Value::Object(a.clone()))).unwrap_or_default();
    args.iter()
        .filter(|(_, v)| {
            let vs = scalars(v);
            !vs.is_empty() && vs.iter().all(|x| produced.contains(x) && !echoed.contains(x))
        })
        .map(|(k, _)| k.clone())
        .collect()
}
