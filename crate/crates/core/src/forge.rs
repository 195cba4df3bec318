//! Tool pool synthesis over a staged curriculum, candidate refinement and
//! deduplication, and validated dependency-graph construction.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::gateway::{Gateway, GatewayError, Shape};
use crate::graph::{Edge, EdgeValidation, ToolGraph};
use crate::knowledge::DomainContext;
use crate::prompts::{self, Temperatures};
use crate::schema::{dedup_signature, flatten_output_params, ParamSchema, SchemaError, ToolPool, ToolSpec};
use crate::text::cosine;
use crate::util::par_map;

#[derive(Debug, Error)]
pub enum ForgeError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("invalid synthesis plan: {0}")]
    Plan(String),
    #[error("no tool survived any step of the synthesis plan")]
    EmptyPool,
    #[error(transparent)]
    Schema(#[from] SchemaError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stage {
    #[serde(rename = "Seed Generation")]
    SeedGeneration,
    #[serde(rename = "Entity Expansion")]
    EntityExpansion,
    #[serde(rename = "Schema Enrichment")]
    SchemaEnrichment,
    #[serde(rename = "Connection Discovery")]
    ConnectionDiscovery,
    #[serde(rename = "Pattern Expansion")]
    PatternExpansion,
}

impl Stage {
    pub const ALL: [Stage; 5] = [
        Stage::SeedGeneration,
        Stage::EntityExpansion,
        Stage::SchemaEnrichment,
        Stage::ConnectionDiscovery,
        Stage::PatternExpansion,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Stage::SeedGeneration => "Seed Generation",
            Stage::EntityExpansion => "Entity Expansion",
            Stage::SchemaEnrichment => "Schema Enrichment",
            Stage::ConnectionDiscovery => "Connection Discovery",
            Stage::PatternExpansion => "Pattern Expansion",
        }
    }

    fn template_id(self) -> String {
        self.label().to_lowercase().replace(' ', "_")
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanStep {
    pub name: Stage,
    pub num_to_generate: usize,
    #[serde(default)]
    pub prompt_template_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisPlan {
    pub steps: Vec<PlanStep>,
}

impl SynthesisPlan {
    /// The five-stage curriculum with 8, 8, 5, 8 and 5 candidates.
    pub fn standard() -> Self {
        let counts = [8, 8, 5, 8, 5];
        SynthesisPlan {
            steps: Stage::ALL
                .iter()
                .zip(counts)
                .map(|(s, n)| PlanStep { name: *s, num_to_generate: n, prompt_template_id: s.template_id() })
                .collect(),
        }
    }

    pub fn check(&self) -> Result<(), ForgeError> {
        if self.steps.is_empty() {
            return Err(ForgeError::Plan("steps must not be empty".into()));
        }
        if let Some(s) = self.steps.iter().find(|s| s.num_to_generate == 0) {
            return Err(ForgeError::Plan(format!("step {} has num_to_generate = 0", s.name)));
        }
        Ok(())
    }

    /// Parses a plan document, filling blank template ids from the stage.
    pub fn from_json(text: &str) -> Result<Self, ForgeError> {
        let mut plan: SynthesisPlan = serde_json::from_str(text).map_err(|e| ForgeError::Plan(e.to_string()))?;
        for s in &mut plan.steps {
            if s.prompt_template_id.is_empty() {
                s.prompt_template_id = s.name.template_id();
            }
        }
        plan.check()?;
        Ok(plan)
    }

    pub fn total_candidates(&self) -> usize {
        self.steps.iter().map(|s| s.num_to_generate).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectionReason {
    LexicalDup,
    StructuralDup,
    SemanticDup,
    ParseFail,
    InvariantFail,
    LlmReject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub candidate_name: String,
    pub stage: String,
    pub reason: RejectionReason,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

/// Append-only record of every discarded candidate.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RejectionLog {
    entries: Vec<Rejection>,
}

impl RejectionLog {
    pub fn push(
        &mut self,
        candidate_name: impl Into<String>,
        stage: impl Into<String>,
        reason: RejectionReason,
        detail: impl Into<String>,
    ) {
        self.entries.push(Rejection {
            candidate_name: candidate_name.into(),
            stage: stage.into(),
            reason,
            detail: detail.into(),
        });
    }

    pub fn extend(&mut self, other: RejectionLog) {
        self.entries.extend(other.entries);
    }

    pub fn entries(&self) -> &[Rejection] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count(&self, reason: RejectionReason) -> usize {
        self.entries.iter().filter(|e| e.reason == reason).count()
    }

    pub fn to_jsonl(&self) -> String {
        self.entries.iter().map(|e| serde_json::to_string(e).expect("rejection serializes") + "\n").collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForgeSettings {
    pub semantic_dup_threshold: f64,
    pub exact_name_edges: bool,
    pub semantic_edges: bool,
    pub semantic_edge_threshold: f64,
    /// Candidate pairs per validation prompt; 1 gives single-pair mode.
    pub edge_batch_size: usize,
    pub workers: usize,
    pub temperatures: Temperatures,
}

impl Default for ForgeSettings {
    fn default() -> Self {
        ForgeSettings {
            semantic_dup_threshold: 0.92,
            exact_name_edges: true,
            semantic_edges: true,
            semantic_edge_threshold: 0.80,
            edge_batch_size: 20,
            workers: 4,
            temperatures: Temperatures::default(),
        }
    }
}

/// Outcome of refining one candidate against the pool.
#[derive(Debug, Clone, PartialEq)]
pub enum Refined {
    Accepted(ToolSpec),
    Rejected(RejectionReason, String),
}

pub struct Forge<'a> {
    gateway: &'a Gateway,
    settings: ForgeSettings,
}

fn tool_text(t: &ToolSpec) -> String {
    format!("{}: {}", t.name, t.description)
}

fn drop_echo_results(tool: &mut ToolSpec) {
    let params: Vec<String> = tool.parameters.keys().cloned().collect();
    tool.results.retain(|k, _| !params.contains(k));
}

fn is_parse_error(e: &GatewayError) -> bool {
    matches!(e, GatewayError::NoDocument | GatewayError::ShapeMismatch { .. })
}

fn type_compatible(a: &ParamSchema, b: &ParamSchema) -> bool {
    use crate::schema::TypeTag::*;
    let numeric = |t| matches!(t, Integer | Number);
    let same = a.type_tag == b.type_tag || (numeric(a.type_tag) && numeric(b.type_tag));
    same && match (&a.enum_values, &b.enum_values) {
        (_, None) => true,
        (Some(out), Some(allowed)) => out.iter().any(|v| allowed.contains(v)),
        (None, Some(_)) => false,
    }
}

#[derive(Debug, Clone)]
struct EdgeCandidate {
    edge: Edge,
    output_description: String,
    input_description: String,
}

impl<'a> Forge<'a> {
    pub fn new(gateway: &'a Gateway, settings: ForgeSettings) -> Self {
        Forge { gateway, settings }
    }

    pub fn settings(&self) -> &ForgeSettings {
        &self.settings
    }

    /// Runs every step in order. Candidates within a step are generated
    /// concurrently against the pool as it stood when the step began, then
    /// refined and admitted one at a time in index order.
    pub fn run_synthesis_plan(
        &self,
        ctx: &DomainContext,
        plan: &SynthesisPlan,
    ) -> Result<(ToolPool, RejectionLog), ForgeError> {
        plan.check()?;
        let mut pool = ToolPool::new(ctx.domain.clone());
        let mut log = RejectionLog::default();
        for step in &plan.steps {
            let stage = step.name;
            let existing: Vec<Value> = pool.tools.iter().map(ToolSpec::to_value).collect();
            let indices: Vec<usize> = (0..step.num_to_generate).collect();
            let generated = par_map(&indices, self.settings.workers, |_, &i| {
                let input = json!({
                    "domain": ctx.domain,
                    "stage": stage.label(),
                    "template": step.prompt_template_id,
                    "index": i,
                    "context": ctx.prompt_value(),
                    "existing": existing,
                });
                let instructions =
                    format!("{}\n{}", prompts::stage_instructions(stage.label()), prompts::GENERATE_TOOL_INSTRUCTIONS);
                let req = prompts::json_request(
                    prompts::TASK_GENERATE_TOOL,
                    &instructions,
                    &input,
                    self.settings.temperatures.tool_generation,
                );
                self.gateway.complete_structured(&req, &Shape::object(&["name"]))
            });
            let before = pool.len();
            let mut superseded = 0;
            for (i, g) in generated.into_iter().enumerate() {
                let doc = match g {
                    Ok(doc) => doc,
                    Err(e) if is_parse_error(&e) => {
                        log.push(format!("{stage}#{i}"), stage.label(), RejectionReason::ParseFail, e.to_string());
                        continue;
                    }
                    Err(e) => return Err(e.into()),
                };
                let cand = match ToolSpec::from_value(&doc) {
                    Ok(t) => t,
                    Err(e) => {
                        let name = doc.get("name").and_then(Value::as_str).unwrap_or("?").to_string();
                        log.push(name, stage.label(), RejectionReason::InvariantFail, e.to_string());
                        continue;
                    }
                };
                let supersede = stage == Stage::SchemaEnrichment && pool.contains(&cand.name);
                match self.refine_in_stage(&cand, &pool, supersede)? {
                    Refined::Accepted(tool) => {
                        if supersede {
                            pool.replace(tool);
                            superseded += 1;
                        } else {
                            pool.push(tool)?;
                        }
                    }
                    Refined::Rejected(reason, detail) => log.push(cand.name.clone(), stage.label(), reason, detail),
                }
            }
            if pool.len() == before && superseded == 0 {
                log::warn!("{}: step {stage} produced no surviving tool", ctx.domain);
            }
        }
        if pool.is_empty() {
            return Err(ForgeError::EmptyPool);
        }
        Ok((pool, log))
    }

    /// Deduplicates `cand` against `pool`, removes echoed results and applies
    /// one model refinement call.
    pub fn refine_candidate(&self, cand: &ToolSpec, pool: &ToolPool) -> Result<Refined, ForgeError> {
        self.refine_in_stage(cand, pool, false)
    }

    /// With `supersede`, the pool tool sharing the candidate's name is the one
    /// being replaced and is left out of the duplicate checks.
    fn refine_in_stage(&self, cand: &ToolSpec, pool: &ToolPool, supersede: bool) -> Result<Refined, ForgeError> {
        let others: Vec<&ToolSpec> = pool.tools.iter().filter(|t| !(supersede && t.name == cand.name)).collect();
        let sig = dedup_signature(cand);
        if let Some(t) = others.iter().find(|t| dedup_signature(t) == sig) {
            return Ok(Refined::Rejected(RejectionReason::StructuralDup, format!("same signature as {}", t.name)));
        }
        if others.iter().any(|t| t.name == cand.name) {
            return Ok(Refined::Rejected(RejectionReason::LexicalDup, format!("name {} is taken", cand.name)));
        }
        if !others.is_empty() {
            let mut texts: Vec<String> = others.iter().map(|t| tool_text(t)).collect();
            texts.push(tool_text(cand));
            let vecs = self.gateway.embed_texts(&texts)?;
            let (last, rest) = vecs.split_last().expect("texts nonempty");
            for (t, v) in others.iter().zip(rest) {
                let sim = cosine(&last.values, &v.values);
                if sim >= self.settings.semantic_dup_threshold {
                    return Ok(Refined::Rejected(
                        RejectionReason::SemanticDup,
                        format!("cosine {sim:.3} to {}", t.name),
                    ));
                }
            }
        }
        let mut pre = cand.clone();
        drop_echo_results(&mut pre);
        let req = prompts::json_request(
            prompts::TASK_REFINE_TOOL,
            prompts::REFINE_TOOL_INSTRUCTIONS,
            &json!({"tool": pre.to_value()}),
            self.settings.temperatures.refinement,
        );
        let doc = match self.gateway.complete_structured(&req, &Shape::object(&["name"])) {
            Ok(d) => d,
            Err(e) if is_parse_error(&e) => return Ok(Refined::Rejected(RejectionReason::ParseFail, e.to_string())),
            Err(e) => return Err(e.into()),
        };
        let mut refined = match ToolSpec::from_value(&doc) {
            Ok(t) => t,
            Err(e) => return Ok(Refined::Rejected(RejectionReason::ParseFail, e.to_string())),
        };
        if refined.name != cand.name {
            refined = refined.renamed(&cand.name);
        }
        drop_echo_results(&mut refined);
        Ok(Refined::Accepted(refined))
    }

    fn edge_candidates(&self, pool: &ToolPool) -> Result<Vec<EdgeCandidate>, ForgeError> {
        let outputs: Vec<Vec<(String, ParamSchema)>> = pool
            .tools
            .iter()
            .map(|t| {
                let mut seen = Vec::<(String, ParamSchema)>::new();
                for (name, schema) in flatten_output_params(t) {
                    if !seen.iter().any(|(n, _)| *n == name) {
                        seen.push((name, schema.clone()));
                    }
                }
                seen
            })
            .collect();
        let field_text = |name: &str, s: &ParamSchema| {
            if s.description.is_empty() {
                name.to_string()
            } else {
                format!("{name}: {}", s.description)
            }
        };
        let mut embeds = std::collections::HashMap::<String, Vec<f64>>::new();
        if self.settings.semantic_edges {
            let mut texts: Vec<String> = Vec::new();
            for (t, outs) in pool.tools.iter().zip(&outputs) {
                texts.extend(outs.iter().map(|(n, s)| field_text(n, s)));
                texts.extend(t.parameters.iter().map(|(n, s)| field_text(n, s)));
            }
            texts.sort();
            texts.dedup();
            if !texts.is_empty() {
                for (t, v) in texts.iter().zip(self.gateway.embed_texts(&texts)?) {
                    embeds.insert(t.clone(), v.values);
                }
            }
        }
        let mut out = Vec::new();
        for (a, outs) in pool.tools.iter().zip(&outputs) {
            for b in &pool.tools {
                if a.name == b.name {
                    continue;
                }
                for (o, os) in outs {
                    for (i, is) in &b.parameters {
                        let exact = self.settings.exact_name_edges && o == i && type_compatible(os, is);
                        let semantic = !exact
                            && self.settings.semantic_edges
                            && type_compatible(os, is)
                            && cosine(&embeds[&field_text(o, os)], &embeds[&field_text(i, is)])
                                >= self.settings.semantic_edge_threshold;
                        if !(exact || semantic) {
                            continue;
                        }
                        out.push(EdgeCandidate {
                            edge: Edge {
                                from_tool: a.name.clone(),
                                output_name: o.clone(),
                                to_tool: b.name.clone(),
                                input_name: i.clone(),
                                validation: if exact {
                                    EdgeValidation::ExactName
                                } else {
                                    EdgeValidation::LlmValidated
                                },
                            },
                            output_description: os.description.clone(),
                            input_description: is.description.clone(),
                        });
                    }
                }
            }
        }
        Ok(out)
    }

    fn validate_batch(&self, batch: &[EdgeCandidate]) -> Result<Option<Vec<(bool, String)>>, GatewayError> {
        let cands: Vec<Value> = batch
            .iter()
            .enumerate()
            .map(|(k, c)| {
                json!({
                    "index": k,
                    "from_tool": c.edge.from_tool,
                    "output": c.edge.output_name,
                    "output_description": c.output_description,
                    "to_tool": c.edge.to_tool,
                    "input": c.edge.input_name,
                    "input_description": c.input_description,
                })
            })
            .collect();
        let req = prompts::json_request(
            prompts::TASK_VALIDATE_EDGES,
            prompts::VALIDATE_EDGES_INSTRUCTIONS,
            &json!({"candidates": cands}),
            self.settings.temperatures.edge_validation,
        );
        let doc = match self.gateway.complete_structured(&req, &Shape::object(&["verdicts"])) {
            Ok(d) => d,
            Err(e) if is_parse_error(&e) => return Ok(None),
            Err(e) => return Err(e),
        };
        let mut out = vec![(false, "no verdict returned".to_string()); batch.len()];
        for v in doc["verdicts"].as_array().into_iter().flatten() {
            let Some(k) = v.get("index").and_then(Value::as_u64).map(|k| k as usize) else {
                continue;
            };
            if k < out.len() {
                let valid = v.get("valid").and_then(Value::as_bool).unwrap_or(false);
                let reason = v.get("reason").and_then(Value::as_str).unwrap_or_default().to_string();
                out[k] = (valid, reason);
            }
        }
        Ok(Some(out))
    }

    /// Finds candidate links between every ordered tool pair and keeps the
    /// ones the validator confirms. Unparseable batch replies fall back to
    /// one prompt per pair.
    pub fn construct_tool_graph(&self, pool: &ToolPool) -> Result<(ToolGraph, RejectionLog), ForgeError> {
        let cands = self.edge_candidates(pool)?;
        let size = self.settings.edge_batch_size.max(1);
        let batches: Vec<&[EdgeCandidate]> = cands.chunks(size).collect();
        let results = par_map(&batches, self.settings.workers, |_, b| -> Result<Vec<(bool, String)>, GatewayError> {
            if let Some(v) = self.validate_batch(b)? {
                return Ok(v);
            }
            let mut v = Vec::with_capacity(b.len());
            for c in b.iter() {
                v.push(match self.validate_batch(std::slice::from_ref(c))? {
                    Some(mut one) => one.remove(0),
                    None => (false, "validator reply unparseable".into()),
                });
            }
            Ok(v)
        });
        let mut graph = ToolGraph::new(pool.clone());
        let mut log = RejectionLog::default();
        for (batch, verdicts) in batches.iter().zip(results) {
            for (c, (valid, reason)) in batch.iter().zip(verdicts?) {
                if valid {
                    graph.add_edge(c.edge.clone());
                } else {
                    let e = &c.edge;
                    log.push(
                        format!("{}.{}->{}.{}", e.from_tool, e.output_name, e.to_tool, e.input_name),
                        "graph",
                        RejectionReason::LlmReject,
                        reason,
                    );
                }
            }
        }
        Ok((graph, log))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{ChatProvider, ChatRequest, ChatResponse, GatewaySettings, HashEmbedder};
    use crate::knowledge::bundled_context;
    use std::sync::Arc;

    #[test]
    fn enum_inputs_need_overlapping_outputs() {
        use crate::schema::TypeTag;
        let with = |vals: &[&str]| ParamSchema {
            enum_values: Some(vals.iter().map(|v| v.to_string()).collect()),
            ..ParamSchema::scalar(TypeTag::String)
        };
        let free = ParamSchema::scalar(TypeTag::String);
        assert!(type_compatible(&with(&["open"]), &with(&["open", "closed"])));
        assert!(type_compatible(&with(&["pending", "open"]), &with(&["open", "closed"])));
        assert!(!type_compatible(&with(&["pending"]), &with(&["open", "closed"])));
        assert!(!type_compatible(&free, &with(&["open"])));
        assert!(type_compatible(&with(&["open"]), &free));
        assert!(!type_compatible(&ParamSchema::scalar(TypeTag::Boolean), &free));
    }

    fn fixed_gateway(reply: &'static str) -> Gateway {
        struct Fixed(&'static str);
        impl ChatProvider for Fixed {
            fn complete(&self, _: &ChatRequest) -> Result<ChatResponse, GatewayError> {
                Ok(ChatResponse::stop(self.0))
            }
        }
        Gateway::new(GatewaySettings::default(), Some(Arc::new(Fixed(reply))), Some(Arc::new(HashEmbedder::default())))
            .unwrap()
    }

    fn ctx() -> DomainContext {
        bundled_context("Customer Support").unwrap()
    }

    #[test]
    fn plan_parsing_and_checks() {
        let p = SynthesisPlan::from_json(r#"{"steps":[{"name":"Seed Generation","num_to_generate":8}]}"#).unwrap();
        assert_eq!(p.steps[0].prompt_template_id, "seed_generation");
        assert!(SynthesisPlan::from_json(r#"{"steps":[]}"#).is_err());
        assert!(SynthesisPlan::from_json(r#"{"steps":[{"name":"Seed Generation","num_to_generate":0}]}"#).is_err());
        assert!(SynthesisPlan::from_json(r#"{"steps":[{"name":"Nope","num_to_generate":1}]}"#).is_err());
        assert_eq!(SynthesisPlan::standard().total_candidates(), 34);
    }

    #[test]
    fn standard_plan_offline() {
        let gw = Gateway::offline();
        let forge = Forge::new(&gw, ForgeSettings::default());
        let (pool, log) = forge.run_synthesis_plan(&ctx(), &SynthesisPlan::standard()).unwrap();
        assert!(pool.len() >= 1 && pool.len() <= 34);
        assert!(pool.len() + log.len() >= 34 - 5, "enrichment supersedes rather than adds");
        let (graph, _) = forge.construct_tool_graph(&pool).unwrap();
        assert!(graph.invariant_violations().is_empty());
        assert!(!graph.edges.is_empty());
        let (pool2, _) = forge.run_synthesis_plan(&ctx(), &SynthesisPlan::standard()).unwrap();
        assert_eq!(pool, pool2);
    }

    #[test]
    fn repeated_tool_is_structural_dup() {
        let doc = r#"{"name":"lookup_item","description":"Look up an item.","parameters":{"type":"object","properties":{"item_id":{"type":"string"}},"required":["item_id"]},"results":{"type":"object","properties":{"price":{"type":"number"}}}}"#;
        let gw = fixed_gateway(doc);
        let forge = Forge::new(&gw, ForgeSettings::default());
        let plan = SynthesisPlan::from_json(r#"{"steps":[{"name":"Seed Generation","num_to_generate":4}]}"#).unwrap();
        let (pool, log) = forge.run_synthesis_plan(&ctx(), &plan).unwrap();
        assert_eq!(pool.len(), 1);
        assert_eq!(log.count(RejectionReason::StructuralDup), 3);
        assert_eq!(log.len(), 3);
    }

    #[test]
    fn single_seed_step_yields_one_tool() {
        let gw = Gateway::offline();
        let forge = Forge::new(&gw, ForgeSettings::default());
        let plan = SynthesisPlan::from_json(r#"{"steps":[{"name":"Seed Generation","num_to_generate":1}]}"#).unwrap();
        let (pool, log) = forge.run_synthesis_plan(&ctx(), &plan).unwrap();
        assert_eq!(pool.len(), 1);
        assert!(log.is_empty());
    }

    #[test]
    fn unparseable_replies_fail_the_run() {
        let gw = fixed_gateway("I cannot help with that.");
        let forge = Forge::new(&gw, ForgeSettings::default());
        let plan = SynthesisPlan::from_json(r#"{"steps":[{"name":"Seed Generation","num_to_generate":2}]}"#).unwrap();
        assert!(matches!(forge.run_synthesis_plan(&ctx(), &plan), Err(ForgeError::EmptyPool)));
    }

    fn sample_tool(name: &str) -> ToolSpec {
        ToolSpec::new(name, "open a ticket")
            .param("requester_id", ParamSchema::string(), false)
            .param("priority", ParamSchema::string(), true)
            .result("ticket_id", ParamSchema::string())
            .result("requester_id", ParamSchema::string())
    }

    #[test]
    fn refinement_removes_echo_and_is_idempotent() {
        let gw = Gateway::offline();
        let forge = Forge::new(&gw, ForgeSettings::default());
        let empty = ToolPool::new("t");
        let Refined::Accepted(r1) = forge.refine_candidate(&sample_tool("open_ticket"), &empty).unwrap() else {
            panic!("rejected")
        };
        assert!(!r1.results.contains_key("requester_id"));
        assert!(r1.is_required("requester_id"));
        assert!(r1.parameters["priority"].is_enum());
        let Refined::Accepted(r2) = forge.refine_candidate(&r1, &empty).unwrap() else { panic!("rejected") };
        assert_eq!(r1, r2);
    }

    #[test]
    fn duplicate_kinds() {
        let gw = Gateway::offline();
        let forge = Forge::new(&gw, ForgeSettings::default());
        let pool = ToolPool::from_tools("t", vec![sample_tool("open_ticket")]).unwrap();
        let renamed = sample_tool("open_ticket").param("extra", ParamSchema::string(), false);
        assert_eq!(
            forge.refine_candidate(&renamed, &pool).unwrap(),
            Refined::Rejected(RejectionReason::LexicalDup, "name open_ticket is taken".into())
        );
        let same_shape = sample_tool("file_ticket");
        assert!(matches!(
            forge.refine_candidate(&same_shape, &pool).unwrap(),
            Refined::Rejected(RejectionReason::StructuralDup, _)
        ));
        let near = ToolSpec::new("open_tickets", "open a ticket").param("x", ParamSchema::string(), true);
        assert!(matches!(
            forge.refine_candidate(&near, &pool).unwrap(),
            Refined::Rejected(RejectionReason::SemanticDup, _)
        ));
    }

    #[test]
    fn exact_name_edge_and_rejection() {
        let a = ToolSpec::new("a", "make")
            .result("ticket_id", ParamSchema::string())
            .result("status", ParamSchema::string());
        let b = ToolSpec::new("b", "use").param("ticket_id", ParamSchema::string(), true);
        let c = ToolSpec::new("c", "stamp").result("created_at", ParamSchema::string());
        let d = ToolSpec::new("d", "filter").param("created_at", ParamSchema::string(), true);
        let pool = ToolPool::from_tools("t", vec![a, b, c, d]).unwrap();
        let gw = Gateway::offline();
        let settings = ForgeSettings { semantic_edges: false, ..ForgeSettings::default() };
        let (g, log) = Forge::new(&gw, settings).construct_tool_graph(&pool).unwrap();
        assert_eq!(g.edges.len(), 1);
        assert_eq!(g.edges[0].validation, EdgeValidation::ExactName);
        assert!(g.has_edge("a", "b"));
        assert_eq!(log.count(RejectionReason::LlmReject), 1);
    }

    #[test]
    fn single_pair_mode_matches_batched() {
        let gw = Gateway::offline();
        let forge = Forge::new(&gw, ForgeSettings::default());
        let (pool, _) = forge.run_synthesis_plan(&ctx(), &SynthesisPlan::standard()).unwrap();
        let (batched, _) = forge.construct_tool_graph(&pool).unwrap();
        let single = Forge::new(&gw, ForgeSettings { edge_batch_size: 1, ..ForgeSettings::default() });
        let (g1, _) = single.construct_tool_graph(&pool).unwrap();
        assert_eq!(batched.edges, g1.edges);
    }
}
