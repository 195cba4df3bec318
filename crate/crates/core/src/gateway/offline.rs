//! Rule-based stand-in for a chat model.
//!
//! Answers every task id in [`crate::prompts`] deterministically from the
//! request payload, so cassettes can be recorded without network access and
//! the whole pipeline runs offline. Replies are plausible rather than clever.

use serde_json::{json, Map, Value};

use super::{ChatProvider, ChatRequest, ChatResponse, GatewayError, Role};
use crate::prompts::{self, parse_task};
use crate::schema::{ParamSchema, Properties, ToolSpec, TypeTag};
use crate::text::{fnv1a, humanize, snake_case, words};

pub const MODEL_ID: &str = "offline-rules-1";

#[derive(Debug, Default, Clone)]
pub struct OfflineModel;

impl OfflineModel {
    pub fn new() -> Self {
        OfflineModel
    }
}

impl ChatProvider for OfflineModel {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let Some(first_user) = req.messages.iter().find(|m| m.role == Role::User) else {
            return Ok(ChatResponse::stop("I need a user message to respond to."));
        };
        let Some((task, input)) = parse_task(&first_user.content) else {
            return Ok(ChatResponse::stop("I can only answer structured task requests."));
        };
        Ok(ChatResponse::stop(respond(&task, &input)))
    }
}

fn hv(parts: &[&str]) -> u64 {
    fnv1a(parts.join("\u{1f}").as_bytes())
}

fn s<'a>(v: &'a Value, key: &str) -> &'a str {
    v.get(key).and_then(Value::as_str).unwrap_or_default()
}

fn fenced(v: &Value) -> String {
    format!("```json\n{}\n```", serde_json::to_string_pretty(v).expect("value serializes"))
}

fn respond(task: &str, input: &Value) -> String {
    match task {
        prompts::TASK_GENERATE_TOOL => generate_tool(input),
        prompts::TASK_REFINE_TOOL => refine_tool(input),
        prompts::TASK_VALIDATE_EDGES => validate_edges(input).to_string(),
        prompts::TASK_SYNTHESIZE_GOAL => json!({"goal": synthesize_goal(input)}).to_string(),
        prompts::TASK_SCORE_GOAL => score_goal(input).to_string(),
        prompts::TASK_PARTITION_PATH => partition_path(input).to_string(),
        prompts::TASK_SUBGOAL => json!({"subgoal": subgoal(input)}).to_string(),
        prompts::TASK_USER_TURN => user_turn(input).to_string(),
        prompts::TASK_CLARIFY => clarify(input).to_string(),
        prompts::TASK_TOOL_CALL => json!({
            "name": s(input, "tool"),
            "arguments": input.get("bound_args").cloned().unwrap_or(json!({})),
        })
        .to_string(),
        prompts::TASK_TOOL_RESPONSE => tool_response(input),
        prompts::TASK_SUMMARIZE => json!({"utterance": summarize(input)}).to_string(),
        prompts::TASK_PARAPHRASE => json!({"utterance": paraphrase(input)}).to_string(),
        prompts::TASK_JUDGE => judge(input),
        prompts::TASK_ASSISTANT_CLAIMS => assistant_claims(input).to_string(),
        _ => json!({"echo": input}).to_string(),
    }
}

// ---------------------------------------------------------------------------
// Tool generation

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Template {
    Create,
    Search,
    Details,
    Assess,
    Check,
    Finalize,
    Escalate,
    UpdateStatus,
    SearchByStatus,
    History,
    ListByAccount,
}

fn str_param(desc: &str) -> ParamSchema {
    ParamSchema::string().with_description(desc)
}

fn enum_param(desc: &str, values: &[&str]) -> ParamSchema {
    str_param(desc).with_enum(values.iter().copied())
}

fn typed(tag: TypeTag, desc: &str) -> ParamSchema {
    ParamSchema::scalar(tag).with_description(desc)
}

fn object(fields: Vec<(String, ParamSchema)>) -> ParamSchema {
    ParamSchema::object(fields.into_iter().collect::<Properties>())
}

const STATUS: [&str; 3] = ["open", "in_progress", "closed"];
const LEVELS: [&str; 3] = ["low", "medium", "high"];

fn template_tool(t: Template, e: &str) -> ToolSpec {
    let h = humanize(e);
    let id = format!("{e}_id");
    let status = format!("{e}_status");
    let details = format!("{e}_details");
    let id_param = || str_param(&format!("unique identifier of the {h}"));
    match t {
        Template::Create => ToolSpec::new(format!("create_{e}"), format!("create a new {h} record for an account"))
            .param(&details, str_param(&format!("free-text details of the {h}")), true)
            .param("account_id", str_param("identifier of the account that owns the record"), true)
            .param(
                &format!("{e}_category"),
                enum_param("category of the record", &["standard", "priority", "custom"])
                    .with_default(json!("standard")),
                false,
            )
            .param(
                "urgency_level",
                enum_param("how urgent the request is", &LEVELS).with_default(json!("medium")),
                false,
            )
            .result(&id, id_param())
            .result("created_at", typed(TypeTag::DateTime, "creation timestamp"))
            .result(&status, enum_param("current status", &STATUS)),
        Template::Search => ToolSpec::new(format!("search_{e}s"), format!("search {h} records of an account"))
            .param("account_id", str_param("identifier of the account that owns the records"), true)
            .param(&status, enum_param("status filter", &STATUS).with_default(json!("open")), false)
            .param("start_date", typed(TypeTag::Date, "earliest creation date"), false)
            .param("end_date", typed(TypeTag::Date, "latest creation date"), false)
            .result(
                &format!("{e}s"),
                ParamSchema::array(object(vec![
                    (id.clone(), id_param()),
                    (details.clone(), str_param("free-text details")),
                    ("created_at".into(), typed(TypeTag::DateTime, "creation timestamp")),
                ])),
            )
            .result("total_count", typed(TypeTag::Integer, "number of matching records")),
        Template::Details => ToolSpec::new(format!("get_{e}_details"), format!("retrieve full details of one {h}"))
            .param(&format!("{e}_identifier"), str_param(&format!("unique identifier of the {h}")), true)
            .result("account_id", str_param("identifier of the owning account"))
            .result(&details, str_param("free-text details"))
            .result(&format!("{e}_category"), enum_param("category of the record", &["standard", "priority", "custom"]))
            .result(&status, enum_param("current status", &STATUS))
            .result("urgency_level", enum_param("how urgent the request is", &LEVELS))
            .result("created_at", typed(TypeTag::DateTime, "creation timestamp"))
            .result("updated_at", typed(TypeTag::DateTime, "last update timestamp")),
        Template::Assess => ToolSpec::new(format!("assess_{e}_risk"), format!("assess the risk of one {h}"))
            .param(&id, id_param(), true)
            .result("risk_level", enum_param("assessed risk", &LEVELS))
            .result("risk_score", typed(TypeTag::Number, "numeric risk score"))
            .result("review_required", typed(TypeTag::Boolean, "whether a manual review is needed")),
        Template::Check => {
            ToolSpec::new(format!("check_{e}_eligibility"), format!("check whether one {h} is eligible for processing"))
                .param(&id, id_param(), true)
                .param("account_id", str_param("identifier of the owning account"), true)
                .result("eligible", typed(TypeTag::Boolean, "whether the record is eligible"))
                .result("eligibility_reason", str_param("explanation of the decision"))
        }
        Template::Finalize => ToolSpec::new(format!("finalize_{e}"), format!("finalize one {h} after review"))
            .param(&id, id_param(), true)
            .param("risk_level", enum_param("assessed risk", &LEVELS), true)
            .param("eligible", typed(TypeTag::Boolean, "eligibility outcome"), true)
            .result("confirmation_code", str_param("confirmation reference"))
            .result("finalized_at", typed(TypeTag::DateTime, "finalization timestamp")),
        Template::Escalate => ToolSpec::new(format!("escalate_{e}"), format!("escalate one {h} to a specialist team"))
            .param(&id, id_param(), true)
            .param(
                "specialist_team",
                enum_param("team that takes over", &["technical", "billing", "legal", "management"]),
                true,
            )
            .param("risk_level", enum_param("assessed risk", &LEVELS), false)
            .param("escalation_notes", str_param("notes for the specialist team"), true)
            .result("escalation_id", str_param("identifier of the escalation"))
            .result("escalation_status", enum_param("escalation status", &["pending", "in_progress", "resolved"]))
            .result("escalated_at", typed(TypeTag::DateTime, "escalation timestamp")),
        Template::UpdateStatus => ToolSpec::new(format!("update_{e}_status"), format!("change the status of one {h}"))
            .param(&id, id_param(), true)
            .param(&status, enum_param("new status", &STATUS), true)
            .result(&id, id_param())
            .result(&status, enum_param("status after the change", &STATUS))
            .result("updated_at", typed(TypeTag::DateTime, "update timestamp")),
        Template::SearchByStatus => {
            ToolSpec::new(format!("search_{e}s_by_status"), format!("list {h} records that have a given status"))
                .param(&status, enum_param("status to match", &STATUS), true)
                .param("limit", typed(TypeTag::Integer, "maximum number of records").with_default(json!(10)), false)
                .result(
                    &format!("{e}s"),
                    ParamSchema::array(object(vec![
                        (id.clone(), id_param()),
                        (status.clone(), enum_param("current status", &STATUS)),
                    ])),
                )
        }
        Template::History => ToolSpec::new(format!("get_{e}_history"), format!("list the change history of one {h}"))
            .param(&id, id_param(), true)
            .result(
                "events",
                ParamSchema::array(object(vec![
                    ("event_type".into(), enum_param("kind of change", &["created", "updated", "escalated", "closed"])),
                    ("occurred_at".into(), typed(TypeTag::DateTime, "when the change happened")),
                    ("actor_id".into(), str_param("who made the change")),
                ])),
            ),
        Template::ListByAccount => ToolSpec::new(
            format!("list_account_{e}s"),
            format!("list all {h} records for an account between two dates"),
        )
        .param("account_id", str_param("identifier of the owning account"), true)
        .param("start_date", typed(TypeTag::Date, "first day of the range"), true)
        .param("end_date", typed(TypeTag::Date, "last day of the range"), false)
        .result(
            &format!("{e}s"),
            ParamSchema::array(object(vec![
                (id.clone(), id_param()),
                ("created_at".into(), typed(TypeTag::DateTime, "creation timestamp")),
            ])),
        )
        .result("total_count", typed(TypeTag::Integer, "number of records")),
    }
}

/// Entity nouns from the context facts, as snake_case identifiers.
fn entities(input: &Value) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let facts = input.pointer("/context/facts").and_then(Value::as_array).cloned().unwrap_or_default();
    for f in &facts {
        let rel = s(f, "relation");
        if rel == "instance of" || rel == "subclass of" {
            continue;
        }
        let w = words(s(f, "value"));
        let tail: Vec<&str> = w.iter().rev().take(2).rev().map(String::as_str).collect();
        let e = snake_case(&tail.join(" "));
        if !e.is_empty() && e.len() <= 24 && !out.contains(&e) {
            out.push(e);
        }
    }
    if out.is_empty() {
        let d = words(s(input, "domain"));
        out.push(d.last().cloned().unwrap_or_else(|| "record".into()));
        out.push("request".into());
    }
    out
}

fn existing_tools(input: &Value) -> Vec<ToolSpec> {
    input
        .get("existing")
        .and_then(Value::as_array)
        .map(|a| a.iter().filter_map(|v| ToolSpec::from_value(v).ok()).collect())
        .unwrap_or_default()
}

fn enrich(mut tool: ToolSpec) -> ToolSpec {
    let options = object(vec![
        ("notify_account".into(), typed(TypeTag::Boolean, "send a notification to the account")),
        ("tags".into(), ParamSchema::array(str_param("free-form label"))),
        (
            "channel".into(),
            enum_param("notification channel", &["email", "sms", "portal"]).with_default(json!("email")),
        ),
    ])
    .with_description("optional processing options");
    if !tool.parameters.contains_key("options") {
        tool.parameters.insert("options".into(), options);
    }
    tool
}

fn generate_tool(input: &Value) -> String {
    let stage = s(input, "stage");
    let i = input.get("index").and_then(Value::as_u64).unwrap_or(0) as usize;
    let ents = entities(input);
    let existing = existing_tools(input);
    let creates: Vec<String> =
        existing.iter().filter_map(|t| t.name.strip_prefix("create_").map(str::to_string)).collect();
    let anchors = if creates.is_empty() { ents.clone() } else { creates };
    let tool = match stage {
        "Seed Generation" => {
            let t = if i % 2 == 0 { Template::Create } else { Template::Search };
            template_tool(t, &ents[(i / 2) % ents.len()])
        }
        "Entity Expansion" => {
            let mut order: Vec<String> =
                ents.iter().filter(|e| !existing.iter().any(|t| t.name.contains(e.as_str()))).cloned().collect();
            order.extend(ents.iter().cloned());
            let t = if i % 2 == 0 { Template::Create } else { Template::Details };
            template_tool(t, &order[(i / 2) % order.len()])
        }
        "Schema Enrichment" if !existing.is_empty() => {
            let mut sorted = existing.clone();
            sorted.sort_by(|a, b| a.parameters.len().cmp(&b.parameters.len()).then(a.name.cmp(&b.name)));
            enrich(sorted[i % sorted.len()].clone())
        }
        "Connection Discovery" => {
            const ORDER: [Template; 4] = [Template::Assess, Template::Check, Template::Finalize, Template::Escalate];
            template_tool(ORDER[i % 4], &anchors[(i / 4) % anchors.len()])
        }
        _ => {
            const ORDER: [Template; 5] = [
                Template::UpdateStatus,
                Template::SearchByStatus,
                Template::History,
                Template::Details,
                Template::ListByAccount,
            ];
            template_tool(ORDER[i % 5], &anchors[(i / 5) % anchors.len()])
        }
    };
    format!("Here is the API for this step:\n{}", fenced(&tool.to_value()))
}

fn categorical_enum(name: &str) -> Option<&'static [&'static str]> {
    if name.ends_with("status") {
        Some(&STATUS)
    } else if name.ends_with("level") || name.ends_with("priority") {
        Some(&LEVELS)
    } else {
        None
    }
}

fn refine_props(props: &mut Properties) {
    let taken: Vec<String> = props.keys().cloned().collect();
    let mut out = Properties::new();
    for (name, mut p) in std::mem::take(props) {
        if p.type_tag == TypeTag::String && p.enum_values.is_none() {
            if let Some(values) = categorical_enum(&name) {
                p.enum_values = Some(values.iter().map(|v| v.to_string()).collect());
            }
        }
        if let Some(c) = p.children.as_mut() {
            refine_props(c);
        }
        let norm = snake_case(&name);
        let key = if norm != name && !taken.contains(&norm) { norm } else { name };
        out.insert(key, p);
    }
    *props = out;
}

fn refine_tool(input: &Value) -> String {
    let Some(mut tool) = input.get("tool").and_then(|t| ToolSpec::from_value(t).ok()) else {
        return "The tool document could not be read.".into();
    };
    refine_props(&mut tool.parameters);
    refine_props(&mut tool.results);
    let ids: Vec<String> =
        tool.parameters.keys().filter(|k| k.ends_with("_id") || k.ends_with("_identifier")).cloned().collect();
    for id in ids {
        if !tool.is_required(&id) {
            tool.required.push(id);
        }
    }
    let mut d = tool.description.trim().to_string();
    if let Some(c) = d.chars().next() {
        d = c.to_uppercase().collect::<String>() + &d[c.len_utf8()..];
    }
    if !d.ends_with('.') {
        d.push('.');
    }
    tool.description = d;
    fenced(&tool.to_value())
}

// ---------------------------------------------------------------------------
// Edge validation

const GENERIC: [&str; 10] = ["id", "status", "level", "type", "date", "time", "at", "code", "name", "count"];

fn norm_tokens(name: &str) -> Vec<String> {
    words(name)
        .into_iter()
        .map(|w| match w.as_str() {
            "identifier" | "ids" => "id".to_string(),
            _ if w.len() > 3 && w.ends_with('s') && !w.ends_with("ss") => w[..w.len() - 1].to_string(),
            _ => w,
        })
        .collect()
}

fn is_timestamp(name: &str) -> bool {
    name.ends_with("_at") || name.ends_with("_date") || name.ends_with("_time") || name == "date"
}

/// Whether `output` can feed `input` unchanged.
pub fn names_compatible(output: &str, input: &str) -> bool {
    if output == input {
        return !is_timestamp(output);
    }
    let a = norm_tokens(output);
    let b = norm_tokens(input);
    if a.last() != b.last() || a.is_empty() {
        return false;
    }
    let (small, big) = if a.len() <= b.len() { (&a, &b) } else { (&b, &a) };
    small.iter().all(|t| big.contains(t)) && small.iter().any(|t| !GENERIC.contains(&t.as_str()))
}

fn validate_edges(input: &Value) -> Value {
    let verdicts: Vec<Value> = input
        .get("candidates")
        .and_then(Value::as_array)
        .map(|cands| {
            cands
                .iter()
                .enumerate()
                .map(|(pos, c)| {
                    let idx = c.get("index").and_then(Value::as_u64).unwrap_or(pos as u64);
                    let (o, i) = (s(c, "output"), s(c, "input"));
                    let valid = names_compatible(o, i);
                    let reason = if valid {
                        format!("{o} carries the value {i} expects")
                    } else {
                        format!("{o} and {i} only share a name or describe different things")
                    };
                    json!({"index": idx, "valid": valid, "reason": reason})
                })
                .collect()
        })
        .unwrap_or_default();
    json!({"verdicts": verdicts})
}

// ---------------------------------------------------------------------------
// Goals and planning

/// Verb phrase for a tool name, e.g. `create_support_ticket` → "create a
/// support ticket".
pub fn tool_phrase(name: &str) -> String {
    let w = words(name);
    let Some((verb, rest)) = w.split_first() else {
        return name.to_string();
    };
    let obj = rest.join(" ");
    match verb.as_str() {
        "create" => format!("create a {obj}"),
        "get" => format!("review the {obj}"),
        "search" | "list" => format!("{verb} {obj}"),
        "update" | "assess" | "check" | "finalize" | "escalate" => format!("{verb} the {obj}"),
        _ => w.join(" "),
    }
}

fn capitalize(text: &str) -> String {
    let mut c = text.chars();
    match c.next() {
        Some(f) => f.to_uppercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}

fn join_and(items: &[String]) -> String {
    match items.len() {
        0 => String::new(),
        1 => items[0].clone(),
        2 => format!("{} and {}", items[0], items[1]),
        n => format!("{}, and {}", items[..n - 1].join(", "), items[n - 1]),
    }
}

fn tool_names(input: &Value) -> Vec<String> {
    input
        .get("tools")
        .and_then(Value::as_array)
        .map(|a| {
            a.iter()
                .filter_map(|t| t.as_str().or_else(|| t.get("name").and_then(Value::as_str)))
                .map(str::to_string)
                .collect()
        })
        .unwrap_or_default()
}

fn synthesize_goal(input: &Value) -> String {
    let names = tool_names(input);
    let phrases: Vec<String> = names.iter().map(|n| tool_phrase(n)).collect();
    match s(input, "pattern_type") {
        "fan" if phrases.len() >= 3 => {
            let n = phrases.len();
            format!(
                "First {}, then {} side by side, and finally {} using both results.",
                phrases[0],
                join_and(&phrases[1..n - 1]),
                phrases[n - 1]
            )
        }
        "conditional" => {
            let d = input.get("decision").cloned().unwrap_or(Value::Null);
            let output = humanize(s(&d, "output_name"));
            let mut parts = Vec::new();
            if let Some(branches) = d.get("branches").and_then(Value::as_object) {
                for (value, tool) in branches {
                    parts.push(format!(
                        "if the {output} is {value}, {}",
                        tool_phrase(tool.as_str().unwrap_or_default())
                    ));
                }
            }
            format!("{}; {}.", capitalize(&phrases.first().cloned().unwrap_or_default()), parts.join(", and "))
        }
        _ => format!("{}.", capitalize(&join_and(&phrases))),
    }
}

fn score_goal(input: &Value) -> Value {
    let goal: Vec<String> = words(s(input, "goal"));
    let names = tool_names(input);
    if names.is_empty() {
        return json!({"coherence": -2, "relevance": -2});
    }
    let covered = names.iter().filter(|n| words(n).iter().skip(1).all(|w| goal.contains(w))).count();
    let cov = covered as f64 / names.len() as f64;
    let coherence = ((4.0 * cov - 2.0).round() as i64).clamp(-2, 2);
    let relevance = if cov >= 0.999 && names.len() <= 5 {
        2
    } else if cov >= 0.5 {
        1
    } else {
        -1
    };
    json!({"coherence": coherence, "relevance": relevance})
}

fn partition_path(input: &Value) -> Value {
    let names = tool_names(input);
    let deps: Vec<(usize, usize)> = input
        .get("dependencies")
        .and_then(Value::as_array)
        .map(|a| a.iter().filter_map(|p| Some((p.get(0)?.as_u64()? as usize, p.get(1)?.as_u64()? as usize))).collect())
        .unwrap_or_default();
    // Turn width alternates between 2 and 3 calls depending on the goal.
    let cap = 2 + (crate::util::derive_seed(0, &[s(input, "goal")]) % 2) as usize;
    let mut parts: Vec<Vec<usize>> = Vec::new();
    for k in 0..names.len() {
        match parts.last_mut() {
            Some(cur) if cur.len() < cap && deps.iter().any(|&(i, j)| j == k && cur.contains(&i)) => cur.push(k),
            _ => parts.push(vec![k]),
        }
    }
    let parts: Vec<Vec<&str>> = parts.iter().map(|p| p.iter().map(|&k| names[k].as_str()).collect()).collect();
    json!({"partitions": parts})
}

fn subgoal(input: &Value) -> String {
    let names = tool_names(input);
    let phrases: Vec<String> = names.iter().map(|n| tool_phrase(n)).collect();
    let base = match phrases.len() {
        0 => "I have a question".to_string(),
        1 if s(input, "position") != "first" => format!("Can you also {}", phrases[0]),
        _ => format!("I need to {}", join_and(&phrases)),
    };
    if base.starts_with("Can you") {
        format!("{base}?")
    } else {
        format!("{base}.")
    }
}

// ---------------------------------------------------------------------------
// Dialogue agents

const SENTENCES: [&str; 8] = [
    "I keep getting an error message when I try to sign in to my account",
    "the last delivery arrived damaged and two items were missing",
    "the monthly statement shows a charge I do not recognize",
    "the dashboard stopped loading after yesterday's update",
    "please review this before the end of the week because it blocks our team",
    "the sensor readings look inconsistent since the last maintenance visit",
    "we need this handled quickly since the customer is waiting",
    "nothing has changed after I followed the troubleshooting guide twice",
];

const PEOPLE: [&str; 6] =
    ["Jordan Lee", "Priya Natarajan", "Samuel Okafor", "Elena Petrova", "Marco Rossi", "Aiko Tanaka"];

fn is_id_like(name: &str) -> bool {
    name == "id" || ["_id", "_identifier", "_reference", "_code", "_number"].iter().any(|suf| name.ends_with(suf))
}

fn is_text_like(name: &str) -> bool {
    ["details", "description", "notes", "reason", "message", "comment", "summary", "issue"]
        .iter()
        .any(|k| name.contains(k))
}

fn id_token(name: &str, h: u64) -> String {
    let first = words(name).into_iter().next().unwrap_or_else(|| "ref".into());
    let prefix: String = first.chars().take(4).collect();
    format!("{prefix}{}", 100_000_000 + h % 900_000_000)
}

fn render(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn known_contains(known: &[String], v: &Value) -> bool {
    known.iter().any(|k| *k == render(v))
}

/// Invents a value conforming to `schema`, avoiding `known` renderings when
/// the type leaves room for alternatives.
fn invent(name: &str, schema: &ParamSchema, h: u64, known: &[String]) -> Value {
    if let Some(values) = &schema.enum_values {
        let fresh: Vec<&String> = values.iter().filter(|v| !known.contains(v)).collect();
        let pool: Vec<&String> = if fresh.is_empty() { values.iter().collect() } else { fresh };
        let pick = pool[(h % pool.len() as u64) as usize].clone();
        return match schema.type_tag {
            TypeTag::Integer => pick.parse::<i64>().map(Value::from).unwrap_or(json!(0)),
            TypeTag::Number => pick.parse::<f64>().map(Value::from).unwrap_or(json!(0.0)),
            TypeTag::Boolean => Value::Bool(pick == "true"),
            _ => Value::String(pick),
        };
    }
    let mut bump = 0u64;
    loop {
        let h2 = h.wrapping_add(bump.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let v = invent_once(name, schema, h2, known);
        if bump >= 16 || !known_contains(known, &v) || schema.type_tag == TypeTag::Boolean {
            return v;
        }
        bump += 1;
    }
}

fn invent_once(name: &str, schema: &ParamSchema, h: u64, known: &[String]) -> Value {
    match schema.type_tag {
        TypeTag::Boolean => Value::Bool(h % 2 == 0),
        TypeTag::Integer => json!(2 + (h % 97) as i64),
        TypeTag::Number => json!((1000 + h % 90_000) as f64 / 100.0),
        TypeTag::Date => json!(format!("2025-09-{:02}", 1 + h % 28)),
        TypeTag::DateTime => json!(format!("2025-09-{:02}T{:02}:{:02}:00Z", 1 + h % 28, h % 24, (h / 24) % 60)),
        TypeTag::String => {
            let v = if is_id_like(name) {
                id_token(name, h)
            } else if name.contains("email") {
                let p = PEOPLE[(h % PEOPLE.len() as u64) as usize].to_lowercase().replace(' ', ".");
                format!("{p}@example.com")
            } else if name == "name" || name.ends_with("_name") {
                PEOPLE[(h % PEOPLE.len() as u64) as usize].to_string()
            } else if is_text_like(name) {
                let s = SENTENCES[(h % SENTENCES.len() as u64) as usize];
                capitalize(s)
            } else {
                let last = words(name).pop().unwrap_or_else(|| "value".into());
                format!("{last}-{}", 100 + h % 900)
            };
            Value::String(v)
        }
        TypeTag::Object => {
            let children = schema.children.as_ref().expect("object has children");
            let mut m = Map::new();
            for (cname, child) in children {
                if schema.required_children.is_empty() || schema.required_children.contains(cname) {
                    m.insert(cname.clone(), invent(cname, child, hv(&[&h.to_string(), cname]), known));
                }
            }
            Value::Object(m)
        }
        TypeTag::Array => {
            let item = schema.item_schema.as_ref().expect("array has items");
            Value::Array(vec![invent(name, item, h ^ 0x5555, known)])
        }
    }
}

fn user_turn(input: &Value) -> Value {
    let seed = input.get("seed").map(Value::to_string).unwrap_or_default();
    let mut known: Vec<String> =
        input.get("known_values").and_then(Value::as_array).map(|a| a.iter().map(render).collect()).unwrap_or_default();
    let clarification = s(input, "act") == "USER_RESPONSE_TO_CLARIFICATION";
    let mut values = Map::new();
    let mut sentences = Vec::new();
    for p in input.get("params").and_then(Value::as_array).into_iter().flatten() {
        let key = s(p, "key");
        let Some(schema) = p.get("schema").and_then(|v| ParamSchema::from_doc(v).ok()) else {
            continue;
        };
        let name = key.rsplit('.').next().unwrap_or(key);
        let v = invent(name, &schema, hv(&[key, &seed]), &known);
        known.push(render(&v));
        let hname = humanize(name);
        sentences.push(if clarification {
            format!("The {hname} is {}.", render(&v))
        } else {
            format!("My {hname} is {}.", render(&v))
        });
        values.insert(key.to_string(), v);
    }
    let utterance = if clarification {
        format!("Sure. {}", sentences.join(" "))
    } else {
        let sub = s(input, "subgoal").trim().to_string();
        std::iter::once(sub).chain(sentences).filter(|x| !x.is_empty()).collect::<Vec<_>>().join(" ")
    };
    json!({"utterance": utterance, "values": values})
}

fn clarify(input: &Value) -> Value {
    let names: Vec<String> = input
        .get("params")
        .and_then(Value::as_array)
        .map(|a| a.iter().filter_map(Value::as_str).map(|k| humanize(k.rsplit('.').next().unwrap_or(k))).collect())
        .unwrap_or_default();
    json!({"utterance": format!("Could you please provide the {}?", join_and(&names))})
}

struct ResponseCtx<'a> {
    args: &'a Map<String, Value>,
    known: &'a Map<String, Value>,
    /// Renderings that freshly generated scalars must not take.
    avoid: Vec<String>,
    /// Allowed values for fields a later call consumes as an enum.
    narrow: Map<String, Value>,
    clock: &'a str,
    salt: String,
}

fn respond_field(name: &str, schema: &ParamSchema, ctx: &ResponseCtx<'_>) -> Value {
    let h = hv(&[&ctx.salt, name]);
    let allowed = ctx.narrow.get(name).and_then(Value::as_array).filter(|a| !a.is_empty());
    for (source, fresh) in [(ctx.args, false), (ctx.known, true)] {
        if let Some(v) = source.get(name) {
            let clash = fresh && known_contains(&ctx.avoid, v);
            if !clash && crate::schema::validate_value(schema, v).ok && allowed.is_none_or(|a| a.contains(v)) {
                return v.clone();
            }
        }
    }
    if let Some(a) = allowed {
        return a[(h % a.len() as u64) as usize].clone();
    }
    if schema.enum_values.is_some() {
        return invent(name, schema, h, &ctx.avoid);
    }
    if !matches!(schema.type_tag, TypeTag::Object | TypeTag::Array) {
        let mut bump = 0u64;
        loop {
            let v = fresh_scalar(name, schema, h.wrapping_add(bump.wrapping_mul(0x9e37_79b9_7f4a_7c15)), ctx);
            if bump >= 16 || !known_contains(&ctx.avoid, &v) {
                return v;
            }
            bump += 1;
        }
    }
    match schema.type_tag {
        TypeTag::Object => {
            let mut m = Map::new();
            for (cname, child) in schema.children.as_ref().expect("object has children") {
                m.insert(cname.clone(), respond_field(cname, child, ctx));
            }
            Value::Object(m)
        }
        _ => {
            let item = schema.item_schema.as_ref().expect("array has items");
            Value::Array(vec![respond_field(name, item, ctx)])
        }
    }
}

fn fresh_scalar(name: &str, schema: &ParamSchema, h: u64, ctx: &ResponseCtx<'_>) -> Value {
    match schema.type_tag {
        TypeTag::DateTime => json!(ctx.clock),
        TypeTag::Date => json!(&ctx.clock[..ctx.clock.len().min(10)]),
        TypeTag::Integer => json!(1 + (h % 50) as i64),
        TypeTag::Number => json!((h % 100_000) as f64 / 100.0),
        TypeTag::Boolean => json!(h % 2 == 0),
        TypeTag::String if is_id_like(name) => json!(id_token(name, h)),
        TypeTag::String if is_text_like(name) => ctx
            .args
            .iter()
            .find(|(k, v)| is_text_like(k) && v.is_string())
            .map(|(_, v)| v.clone())
            .unwrap_or_else(|| json!(capitalize(SENTENCES[(h % SENTENCES.len() as u64) as usize]))),
        TypeTag::String => json!(format!("{}-{}", words(name).pop().unwrap_or_default(), 100 + h % 900)),
        TypeTag::Object | TypeTag::Array => unreachable!("containers are handled by respond_field"),
    }
}

fn tool_response(input: &Value) -> String {
    let Some(tool) = input.get("tool").and_then(|t| ToolSpec::from_value(t).ok()) else {
        return "The tool schema is unreadable.".into();
    };
    let empty = Map::new();
    let args = input.get("arguments").and_then(Value::as_object).unwrap_or(&empty);
    let known = input.get("known").and_then(Value::as_object).unwrap_or(&empty);
    let ctx = ResponseCtx {
        args,
        known,
        avoid: input.get("avoid").and_then(Value::as_array).map(|a| a.iter().map(render).collect()).unwrap_or_default(),
        narrow: input.get("constraints").and_then(Value::as_object).cloned().unwrap_or_default(),
        clock: input.get("clock").and_then(Value::as_str).unwrap_or("2025-01-01T00:00:00Z"),
        salt: format!(
            "{}|{}|{}|{}",
            tool.name,
            Value::Object(args.clone()),
            input.get("call_index").map(Value::to_string).unwrap_or_default(),
            input.get("seed").map(Value::to_string).unwrap_or_default()
        ),
    };
    let mut result = Map::new();
    for (name, schema) in &tool.results {
        result.insert(name.clone(), respond_field(name, schema, &ctx));
    }
    json!({"result": result}).to_string()
}

fn summarize(input: &Value) -> String {
    let mut parts = vec!["Here is what I found.".to_string()];
    for o in input.get("outputs").and_then(Value::as_array).into_iter().flatten() {
        let path = s(o, "path");
        let leaf = path.rsplit('.').next().unwrap_or(path);
        match o.get("value") {
            Some(v @ (Value::String(_) | Value::Number(_) | Value::Bool(_))) => {
                parts.push(format!("The {} is {}.", humanize(leaf), render(v)))
            }
            _ => {}
        }
    }
    parts.join(" ")
}

fn paraphrase(input: &Value) -> String {
    let original = s(input, "utterance");
    let seed = input.get("seed").map(Value::to_string).unwrap_or_default();
    let h = hv(&[original, &seed]);
    let swapped = original
        .replacen("I need to", "I would like to", 1)
        .replacen("Can you also", "Could you also", 1)
        .replacen("Can you", "Could you", 1)
        .replacen("My ", "For reference, my ", 1);
    let prefix = ["Hi there. ", "Hello! ", "Quick request: ", ""][(h % 4) as usize];
    let candidate = format!("{prefix}{swapped}");
    let keep_ok = input
        .get("keep")
        .and_then(Value::as_array)
        .into_iter()
        .flatten()
        .filter_map(Value::as_str)
        .all(|k| candidate.contains(k));
    if keep_ok {
        candidate
    } else {
        original.to_string()
    }
}

fn judge(input: &Value) -> String {
    let turns = input.as_array().cloned().unwrap_or_default();
    let role = |t: &Value| s(t, "role").to_string();
    let mut coherent = true;
    for (i, t) in turns.iter().enumerate() {
        if role(t) == "tool"
            && (i == 0 || !s(&turns[i - 1], "content").contains('(') || role(&turns[i - 1]) != "assistant")
        {
            coherent = false;
        }
    }
    let summaries = turns.iter().filter(|t| role(t) == "assistant" && !s(t, "content").contains('(')).count();
    let coherence = if coherent { 5 } else { 2 };
    let helpfulness = if summaries > 0 { 4 } else { 3 };
    format!(
        "Evaluation of Synthetic Dialogue Data\n\n1. Naturalness: 4 / 5\n- Comments: The user requests read naturally with minor template feel.\n\n2. Coherence: {coherence} / 5\n- Comments: Tool responses follow their calls.\n\n3. Helpfulness: {helpfulness} / 5\n- Comments: The assistant reports the relevant results.\n\n4. Accuracy: 5 / 5\n- Comments: Values match the tool outputs."
    )
}

fn assistant_claims(input: &Value) -> Value {
    let message = s(input, "message");
    let outputs = input.get("tool_outputs").and_then(Value::as_array).map_or(0, Vec::len);
    let claims = message.chars().any(|c| c.is_ascii_digit());
    let hallucinated = outputs == 0 && claims;
    json!({
        "hallucinated": hallucinated,
        "reason": if hallucinated { "states concrete results without any tool output" } else { "no unsupported claims" },
    })
}
