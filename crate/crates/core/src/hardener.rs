//! Robustness post-processing: failure injection with recovery, user-turn
//! paraphrase and tool-name masking.

use std::collections::BTreeSet;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::engine::{call_sites, dependent_args, scalars, CallSite, DialogueTranscript, Turn, TurnKind};
use crate::gateway::{Gateway, GatewayError, Shape};
use crate::prompts;
use crate::schema::{example_value, validate_call_args, ToolPool, ToolSpec, TypeTag, ViolationKind};
use crate::text::{cosine, humanize, lexical_similarity};
use crate::util::derive_seed;

pub const MISSING_PARAM: &str = "MISSING_PARAM";
pub const TYPE_MISMATCH: &str = "TYPE_MISMATCH";
pub const INVALID_ENUM_VALUE: &str = "INVALID_ENUM_VALUE";
pub const MISSING_DEPENDENCY: &str = "MISSING_DEPENDENCY";
pub const NOT_APPLICABLE: &str = "NOT_APPLICABLE";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectionMode {
    Cascading,
    OutOfOrder,
    WrongTool,
    SchemaViolation,
    MissingFunction,
}

impl InjectionMode {
    pub const ALL: [InjectionMode; 5] = [
        InjectionMode::Cascading,
        InjectionMode::OutOfOrder,
        InjectionMode::WrongTool,
        InjectionMode::SchemaViolation,
        InjectionMode::MissingFunction,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            InjectionMode::Cascading => "cascading",
            InjectionMode::OutOfOrder => "out_of_order",
            InjectionMode::WrongTool => "wrong_tool",
            InjectionMode::SchemaViolation => "schema_violation",
            InjectionMode::MissingFunction => "missing_function",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InjectionConfig {
    pub p_inject: f64,
    pub complex_share: f64,
    pub seed: u64,
    pub enabled_modes: BTreeSet<InjectionMode>,
}

impl Default for InjectionConfig {
    fn default() -> Self {
        InjectionConfig {
            p_inject: 0.5,
            complex_share: 0.3,
            seed: 0,
            enabled_modes: InjectionMode::ALL.into_iter().collect(),
        }
    }
}

impl InjectionConfig {
    pub fn check(&self) -> Result<(), String> {
        for (name, p) in [("p_inject", self.p_inject), ("complex_share", self.complex_share)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("{name} = {p} is outside [0, 1]"));
            }
        }
        Ok(())
    }

    fn on(&self, m: InjectionMode) -> bool {
        self.enabled_modes.contains(&m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityScore {
    pub embedding_sim: f64,
    pub lexical_sim: f64,
    pub combined: f64,
}

impl SimilarityScore {
    pub fn new(embedding_sim: f64, lexical_sim: f64, alpha: f64) -> Self {
        SimilarityScore { embedding_sim, lexical_sim, combined: alpha * embedding_sim + (1.0 - alpha) * lexical_sim }
    }
}

/// Embedding plus edit-distance similarity between tools.
pub struct HybridMatcher<'a> {
    gateway: &'a Gateway,
    pub alpha: f64,
    pub threshold: f64,
}

fn tool_text(t: &ToolSpec) -> String {
    format!("{}: {}", humanize(&t.name), t.description)
}

impl<'a> HybridMatcher<'a> {
    pub fn new(gateway: &'a Gateway) -> Self {
        HybridMatcher { gateway, alpha: 0.7, threshold: 0.6 }
    }

    pub fn score_text(&self, a: &str, b: &str) -> Result<SimilarityScore, GatewayError> {
        let v = self.gateway.embed_texts(&[a.to_string(), b.to_string()])?;
        Ok(SimilarityScore::new(cosine(&v[0].values, &v[1].values), lexical_similarity(a, b), self.alpha))
    }

    pub fn score(&self, a: &ToolSpec, b: &ToolSpec) -> Result<SimilarityScore, GatewayError> {
        let v = self.gateway.embed_texts(&[tool_text(a), tool_text(b)])?;
        Ok(SimilarityScore::new(cosine(&v[0].values, &v[1].values), lexical_similarity(&a.name, &b.name), self.alpha))
    }

    /// For each tool in `targets`, the most similar other pool tool whose
    /// combined score clears the threshold.
    pub fn confusables(
        &self,
        pool: &ToolPool,
        targets: &[&str],
    ) -> Result<IndexMap<String, (String, SimilarityScore)>, GatewayError> {
        let texts: Vec<String> = pool.tools.iter().map(tool_text).collect();
        let vecs = self.gateway.embed_texts(&texts)?;
        let mut out = IndexMap::new();
        for &target in targets {
            let Some(ti) = pool.tools.iter().position(|t| t.name == target) else {
                continue;
            };
            let mut best: Option<(usize, SimilarityScore)> = None;
            for (j, other) in pool.tools.iter().enumerate() {
                if other.name == target {
                    continue;
                }
                let s = SimilarityScore::new(
                    cosine(&vecs[ti].values, &vecs[j].values),
                    lexical_similarity(target, &other.name),
                    self.alpha,
                );
                if s.combined > self.threshold && best.is_none_or(|(_, b)| s.combined > b.combined) {
                    best = Some((j, s));
                }
            }
            if let Some((j, s)) = best {
                out.insert(target.to_string(), (pool.tools[j].name.clone(), s));
            }
        }
        Ok(out)
    }
}

fn error_result(code: &str, message: String) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("error".into(), json!({"code": code, "message": message}));
    m
}

fn mark(mut t: Turn, mode: InjectionMode) -> Turn {
    t.meta.insert("injected".into(), json!(true));
    t.meta.insert("injection_mode".into(), json!(mode.as_str()));
    t
}

fn variant(d: &DialogueTranscript, mode: InjectionMode) -> DialogueTranscript {
    let mut v = d.clone();
    v.id = format!("{}-{}", d.id, mode.as_str());
    v.modified = true;
    v.injection_mode = Some(mode.as_str().into());
    v
}

fn schema_of<'s>(d: &'s DialogueTranscript, pool: &'s ToolPool, tool: &str) -> Option<&'s ToolSpec> {
    d.declared(tool).or_else(|| pool.get(tool))
}

/// Maximal runs of consecutive call/response pairs with no other turn in
/// between.
fn call_runs(turns: &[Turn]) -> Vec<Vec<CallSite>> {
    let mut runs: Vec<Vec<CallSite>> = Vec::new();
    let mut cur: Vec<CallSite> = Vec::new();
    for site in call_sites(turns, false) {
        let contiguous = cur.last().is_some_and(|p| p.response.map_or(p.call + 1, |r| r + 1) == site.call);
        if !contiguous && !cur.is_empty() {
            runs.push(std::mem::take(&mut cur));
        }
        cur.push(site);
    }
    if !cur.is_empty() {
        runs.push(cur);
    }
    runs
}

/// Reverse-order failing calls, one per adjacent pair, ahead of a run of at
/// least three calls that is then replayed unchanged.
pub fn inject_cascading_failure(d: &DialogueTranscript, seed: u64) -> Option<DialogueTranscript> {
    let turns = &d.conversations;
    let runs: Vec<Vec<CallSite>> = call_runs(turns).into_iter().filter(|r| r.len() >= 3).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["cascading", &d.id]));
    let run = runs.choose(&mut rng)?;
    let step = turns[run[0].call].plan_step_idx;
    let mode = InjectionMode::Cascading;
    let mut failures = Vec::new();
    for i in (1..run.len()).rev() {
        let (prev, cur) = (&run[i - 1], &run[i]);
        let tool = cur.tool(turns);
        let args = cur.args(turns).cloned().unwrap_or_default();
        let dep = dependent_args(turns, prev, cur)
            .into_iter()
            .next()
            .or_else(|| run[..i].iter().rev().find_map(|e| dependent_args(turns, e, cur).into_iter().next()))
            .or_else(|| d.declared(tool).and_then(|s| s.required.iter().find(|r| args.contains_key(*r)).cloned()))
            .or_else(|| args.keys().next().cloned());
        let mut broken = args.clone();
        if let Some(p) = &dep {
            broken.shift_remove(p);
        }
        let missing = dep.as_deref().unwrap_or("input");
        failures.push(mark(Turn::call(tool, broken, step), mode));
        failures.push(mark(
            Turn::response(
                tool,
                error_result(MISSING_DEPENDENCY, format!("Prerequisite step not completed: missing input '{missing}'")),
                step,
            ),
            mode,
        ));
    }
    let mut v = variant(d, mode);
    v.conversations.splice(run[0].call..run[0].call, failures);
    Some(v)
}

/// A downstream call, stripped of the argument it takes from an upstream
/// output, placed ahead of the upstream call.
pub fn inject_out_of_order(d: &DialogueTranscript) -> Option<DialogueTranscript> {
    let turns = &d.conversations;
    let sites = call_sites(turns, false);
    let mut pairs = Vec::new();
    for (i, a) in sites.iter().enumerate() {
        for b in &sites[i + 1..] {
            let deps = dependent_args(turns, a, b);
            if !deps.is_empty() {
                let required = d.declared(b.tool(turns)).is_some_and(|s| deps.iter().any(|p| s.is_required(p)));
                pairs.push((a, b, deps, required));
            }
        }
    }
    let (a, b, deps, _) = pairs.iter().find(|p| p.3).or_else(|| pairs.first())?;
    let mode = InjectionMode::OutOfOrder;
    let step = turns[a.call].plan_step_idx;
    let tool = b.tool(turns);
    let mut broken = b.args(turns).cloned().unwrap_or_default();
    for p in deps {
        broken.shift_remove(p);
    }
    let msg = format!("Missing dependency: '{}' must come from {} first", deps.join("', '"), a.tool(turns));
    let inserted = vec![
        mark(Turn::call(tool, broken, step), mode),
        mark(Turn::response(tool, error_result(MISSING_DEPENDENCY, msg), step), mode),
    ];
    let mut v = variant(d, mode);
    v.conversations.splice(a.call..a.call, inserted);
    Some(v)
}

fn best_effort_args(target: &ToolSpec, source: &Map<String, Value>) -> Map<String, Value> {
    let mut out = Map::new();
    for (name, schema) in &target.parameters {
        if let Some(v) = source.get(name) {
            out.insert(name.clone(), v.clone());
        } else if target.is_required(name) {
            out.insert(name.clone(), example_value(schema));
        }
    }
    out
}

/// A call to a similar but wrong tool, an unhelpful reply, then the
/// original call.
pub fn inject_wrong_tool(
    d: &DialogueTranscript,
    pool: &ToolPool,
    matcher: &HybridMatcher<'_>,
) -> Result<Option<DialogueTranscript>, GatewayError> {
    if pool.len() < 2 {
        return Ok(None);
    }
    let turns = &d.conversations;
    let sites = call_sites(turns, false);
    let called: Vec<&str> = sites.iter().map(|s| s.tool(turns)).collect();
    let conf = matcher.confusables(pool, &called)?;
    let mut best: Option<(&CallSite, &str, f64)> = None;
    for s in &sites {
        if let Some((other, score)) = conf.get(s.tool(turns)) {
            if best.is_none_or(|(_, _, b)| score.combined > b) {
                best = Some((s, other.as_str(), score.combined));
            }
        }
    }
    let Some((site, other, _)) = best else {
        return Ok(None);
    };
    let wrong = pool.get(other).expect("confusable comes from the pool").clone();
    let mode = InjectionMode::WrongTool;
    let step = turns[site.call].plan_step_idx;
    let args = best_effort_args(&wrong, site.args(turns).unwrap_or(&Map::new()));
    let msg = format!("{other} does not handle this request; no relevant result");
    let inserted = vec![
        mark(Turn::call(other, args, step), mode),
        mark(Turn::response(other, error_result(NOT_APPLICABLE, msg), step), mode),
    ];
    let mut v = variant(d, mode);
    if v.declared(other).is_none() {
        v.tools.push(wrong);
    }
    v.conversations.splice(site.call..site.call, inserted);
    Ok(Some(v))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mutation {
    Drop,
    TypeBreak,
    OutOfEnum,
}

fn break_type(tag: TypeTag, v: &Value) -> Value {
    match tag {
        TypeTag::String | TypeTag::Date | TypeTag::DateTime => {
            let digits: String = v.as_str().unwrap_or_default().chars().filter(char::is_ascii_digit).take(9).collect();
            Value::from(digits.parse::<i64>().unwrap_or(0))
        }
        _ => Value::String(crate::engine::render_value(v)),
    }
}

fn violation_code(kind: ViolationKind) -> &'static str {
    match kind {
        ViolationKind::MissingRequired => MISSING_PARAM,
        ViolationKind::EnumViolation => INVALID_ENUM_VALUE,
        _ => TYPE_MISMATCH,
    }
}

/// A mutated copy of one call (dropped required argument, wrong type or
/// out-of-enum value), a standardized error, then the original call.
pub fn inject_schema_violation(d: &DialogueTranscript, pool: &ToolPool, seed: u64) -> Option<DialogueTranscript> {
    let turns = &d.conversations;
    let mut options = Vec::new();
    for site in call_sites(turns, false) {
        let Some(schema) = schema_of(d, pool, site.tool(turns)) else {
            continue;
        };
        let args = site.args(turns).cloned().unwrap_or_default();
        let mut muts: Vec<(Mutation, String)> = Vec::new();
        for (name, _) in &args {
            let Some(p) = schema.parameters.get(name) else {
                continue;
            };
            if schema.is_required(name) {
                muts.push((Mutation::Drop, name.clone()));
            }
            muts.push((Mutation::TypeBreak, name.clone()));
            if p.is_enum() {
                muts.push((Mutation::OutOfEnum, name.clone()));
            }
        }
        if !muts.is_empty() {
            options.push((site, schema, args, muts));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["schema_violation", &d.id]));
    let (site, schema, args, muts) = options.choose(&mut rng)?;
    let kinds: Vec<Mutation> = [Mutation::Drop, Mutation::TypeBreak, Mutation::OutOfEnum]
        .into_iter()
        .filter(|k| muts.iter().any(|(m, _)| m == k))
        .collect();
    let kind = *kinds.choose(&mut rng).expect("nonempty");
    let params: Vec<&String> = muts.iter().filter(|(m, _)| *m == kind).map(|(_, p)| p).collect();
    let param = *params.choose(&mut rng).expect("nonempty");
    let mut broken = args.clone();
    let p = &schema.parameters[param];
    match kind {
        Mutation::Drop => {
            broken.shift_remove(param);
        }
        Mutation::TypeBreak => {
            broken.insert(param.clone(), break_type(p.type_tag, &args[param]));
        }
        Mutation::OutOfEnum => {
            let allowed = p.enum_values.clone().unwrap_or_default();
            let mut bad = format!("invalid_{}", allowed.first().map_or("value", String::as_str));
            while allowed.contains(&bad) {
                bad.push('_');
            }
            broken.insert(param.clone(), Value::String(bad));
        }
    }
    let report = validate_call_args(schema, &broken);
    let violation = report.violations.first()?;
    let code = violation_code(violation.kind);
    let tool = site.tool(turns);
    let step = turns[site.call].plan_step_idx;
    let mode = InjectionMode::SchemaViolation;
    let inserted = vec![
        mark(Turn::call(tool, broken, step), mode),
        mark(
            Turn::response(
                tool,
                error_result(code, format!("{code}: {} ({})", violation.message, violation.path)),
                step,
            ),
            mode,
        ),
    ];
    let mut v = variant(d, mode);
    v.conversations.splice(site.call..site.call, inserted);
    Some(v)
}

/// Hides one called tool until the user supplies its schema document.
pub fn inject_missing_function(d: &DialogueTranscript, pool: &ToolPool, seed: u64) -> Option<DialogueTranscript> {
    let turns = &d.conversations;
    let mut firsts: Vec<CallSite> = Vec::new();
    for s in call_sites(turns, false) {
        if !firsts.iter().any(|f| f.tool(turns) == s.tool(turns)) {
            firsts.push(s);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["missing_function", &d.id]));
    let site = *firsts.choose(&mut rng)?;
    let name = site.tool(turns).to_string();
    let spec = schema_of(d, pool, &name)?.clone();
    let mode = InjectionMode::MissingFunction;
    let step = turns[site.call].plan_step_idx;
    let refusal = mark(
        Turn::text(
            TurnKind::AssistantText,
            format!("I can't do that yet: none of my available tools can {}.", humanize(&name)),
            step,
        ),
        mode,
    );
    let mut provide =
        mark(Turn::text(TurnKind::User, format!("Here is the tool you need:\n{}", spec.to_json()), step), mode);
    provide.meta.insert("provided_tool".into(), spec.to_value());
    let mut v = variant(d, mode);
    v.tools.retain(|t| t.name != name);
    v.conversations.splice(site.call..site.call, [refusal, provide]);
    Some(v)
}

/// Tools visible just before turn `idx`: the declared list plus any schema
/// a user turn supplied earlier.
pub fn tools_available_at(d: &DialogueTranscript, idx: usize) -> Vec<ToolSpec> {
    let mut tools = d.tools.clone();
    for t in &d.conversations[..idx.min(d.conversations.len())] {
        if let Some(spec) = t.meta.get("provided_tool").and_then(|v| ToolSpec::from_value(v).ok()) {
            if !tools.iter().any(|x| x.name == spec.name) {
                tools.push(spec);
            }
        }
    }
    tools
}

pub struct Hardener<'a> {
    gateway: &'a Gateway,
    pub matcher: HybridMatcher<'a>,
    pub paraphrase_temperature: f64,
}

impl<'a> Hardener<'a> {
    pub fn new(gateway: &'a Gateway) -> Self {
        Hardener {
            gateway,
            matcher: HybridMatcher::new(gateway),
            paraphrase_temperature: prompts::Temperatures::default().paraphrase,
        }
    }

    /// Keeps every original and adds at most one error variant per dialogue.
    pub fn inject_errors(
        &self,
        dialogues: &[DialogueTranscript],
        pool: &ToolPool,
        cfg: &InjectionConfig,
    ) -> Result<Vec<DialogueTranscript>, GatewayError> {
        let mut out = Vec::with_capacity(dialogues.len() * 2);
        for (i, d) in dialogues.iter().enumerate() {
            out.push(d.clone());
            if let Some(v) = self.inject_one(d, pool, cfg, i)? {
                out.push(v);
            }
        }
        Ok(out)
    }

    fn inject_one(
        &self,
        d: &DialogueTranscript,
        pool: &ToolPool,
        cfg: &InjectionConfig,
        index: usize,
    ) -> Result<Option<DialogueTranscript>, GatewayError> {
        let seed = derive_seed(cfg.seed, &["inject", &index.to_string(), &d.id]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        if rng.gen::<f64>() >= cfg.p_inject {
            return Ok(None);
        }
        if rng.gen::<f64>() < cfg.complex_share {
            if cfg.on(InjectionMode::Cascading) {
                if let Some(v) = inject_cascading_failure(d, seed) {
                    return Ok(Some(v));
                }
            }
            if cfg.on(InjectionMode::OutOfOrder) {
                if let Some(v) = inject_out_of_order(d) {
                    return Ok(Some(v));
                }
            }
            if cfg.on(InjectionMode::WrongTool) {
                if let Some(v) = inject_wrong_tool(d, pool, &self.matcher)? {
                    return Ok(Some(v));
                }
            }
            if cfg.on(InjectionMode::MissingFunction) {
                if let Some(v) = inject_missing_function(d, pool, seed) {
                    return Ok(Some(v));
                }
            }
        }
        if cfg.on(InjectionMode::SchemaViolation) {
            return Ok(inject_schema_violation(d, pool, seed));
        }
        Ok(None)
    }

    /// Rewrites user turns; a rewrite that drops any concrete value the turn
    /// mentions is discarded.
    pub fn paraphrase_user_turns(&self, d: &DialogueTranscript, seed: u64) -> Result<DialogueTranscript, GatewayError> {
        let mut known: Vec<String> = Vec::new();
        for t in &d.conversations {
            let mut vals = Vec::new();
            if let Some(v) = t.meta.get("values") {
                vals.extend(scalars(v));
            }
            if let Some(r) = &t.result {
                vals.extend(scalars(&Value::Object(r.clone())));
            }
            for v in vals {
                let s = crate::engine::render_value(&v);
                if !s.is_empty() && !known.contains(&s) {
                    known.push(s);
                }
            }
        }
        for spec in &d.tools {
            for p in spec.parameters.values() {
                known.extend(p.enum_values.iter().flatten().cloned());
            }
        }
        let mut out = d.clone();
        for (i, t) in out.conversations.iter_mut().enumerate() {
            if t.kind != TurnKind::User || t.meta.contains_key("provided_tool") {
                continue;
            }
            let keep: Vec<&String> = known.iter().filter(|k| t.content.contains(k.as_str())).collect();
            let req = prompts::structured_request(
                prompts::SYSTEM_USER_AGENT,
                prompts::TASK_PARAPHRASE,
                prompts::PARAPHRASE_INSTRUCTIONS,
                &json!({"utterance": t.content, "keep": keep, "seed": derive_seed(seed, &["paraphrase", &i.to_string()])}),
                self.paraphrase_temperature,
            );
            let candidate = match self.gateway.complete_structured(&req, &Shape::object(&["utterance"])) {
                Ok(v) => v["utterance"].as_str().unwrap_or_default().trim().to_string(),
                Err(GatewayError::NoDocument) | Err(GatewayError::ShapeMismatch { .. }) => continue,
                Err(e) => return Err(e),
            };
            if !candidate.is_empty() && keep.iter().all(|k| candidate.contains(k.as_str())) {
                t.content = candidate;
            }
        }
        Ok(out)
    }
}

fn name_pattern(map: &IndexMap<String, String>) -> Regex {
    let mut names: Vec<&String> = map.keys().collect();
    names.sort_by_key(|n| std::cmp::Reverse(n.len()));
    let alternation = names.iter().map(|n| regex::escape(n)).collect::<Vec<_>>().join("|");
    Regex::new(&format!(r"\b(?:{alternation})\b")).expect("escaped names form a valid pattern")
}

/// Whole-identifier replacement of every key of `map` in `text`.
pub fn mask_text(text: &str, map: &IndexMap<String, String>) -> String {
    if map.is_empty() {
        return text.to_string();
    }
    let re = name_pattern(map);
    re.replace_all(text, |c: &regex::Captures<'_>| map[&c[0]].clone()).into_owned()
}

fn rename_all(d: &DialogueTranscript, map: &IndexMap<String, String>) -> DialogueTranscript {
    let re = name_pattern(map);
    let swap = |s: &str| re.replace_all(s, |c: &regex::Captures<'_>| map[&c[0]].clone()).into_owned();
    let rename_spec = |t: &ToolSpec| map.get(&t.name).map_or_else(|| t.clone(), |n| t.renamed(n));
    let mut out = d.clone();
    out.tools = d.tools.iter().map(rename_spec).collect();
    for t in &mut out.conversations {
        t.content = swap(&t.content);
        if let Some(n) = &t.tool_name {
            t.tool_name = Some(map.get(n).cloned().unwrap_or_else(|| n.clone()));
        }
        if let Some(v) = t.meta.get("provided_tool").and_then(|v| ToolSpec::from_value(v).ok()) {
            t.meta.insert("provided_tool".into(), rename_spec(&v).to_value());
        }
    }
    out
}

/// Replaces tool names with `func_NN` under a seeded bijection; descriptions
/// stay as they are.
pub fn mask_schema_names(d: &DialogueTranscript, seed: u64) -> DialogueTranscript {
    if d.masking.is_some() {
        return d.clone();
    }
    let mut names: Vec<String> = Vec::new();
    let mut push = |n: &str| {
        if !names.iter().any(|x| x == n) {
            names.push(n.to_string());
        }
    };
    d.tools.iter().for_each(|t| push(&t.name));
    d.conversations.iter().filter_map(|t| t.tool_name.as_deref()).for_each(&mut push);
    let mut order = names.clone();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &["mask", &d.id])));
    let width = order.len().to_string().len().max(2);
    let map: IndexMap<String, String> =
        order.iter().enumerate().map(|(i, n)| (n.clone(), format!("func_{:0width$}", i + 1))).collect();
    let mut out = rename_all(d, &map);
    out.masking = Some(map);
    out
}

pub fn unmask_schema_names(d: &DialogueTranscript) -> DialogueTranscript {
    let Some(map) = &d.masking else {
        return d.clone();
    };
    let inverse: IndexMap<String, String> = map.iter().map(|(k, v)| (v.clone(), k.clone())).collect();
    let mut out = rename_all(d, &inverse);
    out.masking = None;
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::ParamSchema;

    fn pool() -> ToolPool {
        let a = ToolSpec::new("open_case", "open a case")
            .param("account_id", ParamSchema::string(), true)
            .param("priority", ParamSchema::string().with_enum(["low", "high"]), false)
            .result("case_id", ParamSchema::string());
        let b = ToolSpec::new("assign_case", "assign a case")
            .param("case_id", ParamSchema::string(), true)
            .result("assignment_id", ParamSchema::string());
        let c = ToolSpec::new("close_case", "close a case")
            .param("assignment_id", ParamSchema::string(), true)
            .param("case_id", ParamSchema::string(), true)
            .result("closed", ParamSchema::scalar(TypeTag::Boolean));
        ToolPool::from_tools("Demo", vec![a, b, c]).unwrap()
    }

    fn obj(v: Value) -> Map<String, Value> {
        v.as_object().unwrap().clone()
    }

    fn dialogue() -> DialogueTranscript {
        let p = pool();
        let mut user = Turn::text(TurnKind::User, "Open a high priority case for acct-77 and take it to the end.", 1);
        user.meta.insert("values".into(), json!({"open_case.account_id": "acct-77", "open_case.priority": "high"}));
        DialogueTranscript {
            id: "d1".into(),
            plan_ref: "p1".into(),
            seed: 1,
            domain: "Demo".into(),
            goal_text: "g".into(),
            tools: p.tools.clone(),
            conversations: vec![
                Turn::text(TurnKind::System, "Current time: 2025-08-01 00:00:00.", 0),
                user,
                Turn::call("open_case", obj(json!({"account_id": "acct-77", "priority": "high"})), 2),
                Turn::response("open_case", obj(json!({"case_id": "C-1"})), 2),
                Turn::call("assign_case", obj(json!({"case_id": "C-1"})), 3),
                Turn::response("assign_case", obj(json!({"assignment_id": "A-9"})), 3),
                Turn::call("close_case", obj(json!({"assignment_id": "A-9", "case_id": "C-1"})), 4),
                Turn::response("close_case", obj(json!({"closed": true})), 4),
                Turn::text(TurnKind::AssistantText, "Case C-1 is closed.", 5),
            ],
            ..DialogueTranscript::default()
        }
    }

    fn originals_recovered(orig: &DialogueTranscript, v: &DialogueTranscript) {
        v.check().unwrap();
        let tail: Vec<&Turn> = v.conversations.iter().filter(|t| !crate::engine::is_injected(t)).collect();
        assert_eq!(tail, orig.conversations.iter().collect::<Vec<_>>());
        assert!(v.modified);
    }

    #[test]
    fn cascading_inserts_one_pair_per_link() {
        let d = dialogue();
        let v = inject_cascading_failure(&d, 3).unwrap();
        originals_recovered(&d, &v);
        let injected: Vec<&Turn> = v.conversations.iter().filter(|t| crate::engine::is_injected(t)).collect();
        assert_eq!(injected.len(), 4);
        assert_eq!(injected[0].tool_name.as_deref(), Some("close_case"));
        assert!(!injected[0].args.as_ref().unwrap().contains_key("assignment_id"));
        assert_eq!(injected[2].tool_name.as_deref(), Some("assign_case"));
        let mut short = d.clone();
        short.conversations.drain(6..8);
        assert!(inject_cascading_failure(&short, 3).is_none());
    }

    #[test]
    fn out_of_order_strips_dependency() {
        let d = dialogue();
        let v = inject_out_of_order(&d).unwrap();
        originals_recovered(&d, &v);
        let early = &v.conversations[2];
        assert_eq!(early.tool_name.as_deref(), Some("assign_case"));
        let p = pool();
        assert!(validate_call_args(p.get("assign_case").unwrap(), early.args.as_ref().unwrap())
            .has(ViolationKind::MissingRequired));
        let mut flat = d.clone();
        flat.conversations.drain(4..8);
        assert!(inject_out_of_order(&flat).is_none());
    }

    #[test]
    fn schema_violation_retries_original() {
        let d = dialogue();
        let mut codes = BTreeSet::new();
        for seed in 0..40 {
            let v = inject_schema_violation(&d, &pool(), seed).unwrap();
            originals_recovered(&d, &v);
            let err = v
                .conversations
                .iter()
                .find(|t| t.kind == TurnKind::ToolResponse && crate::engine::is_injected(t))
                .unwrap();
            codes.insert(err.result.as_ref().unwrap()["error"]["code"].as_str().unwrap().to_string());
        }
        assert_eq!(codes, [MISSING_PARAM, TYPE_MISMATCH, INVALID_ENUM_VALUE].map(String::from).into_iter().collect());
    }

    #[test]
    fn missing_function_hides_then_restores() {
        let d = dialogue();
        let v = inject_missing_function(&d, &pool(), 9).unwrap();
        originals_recovered(&d, &v);
        let at = v
            .conversations
            .iter()
            .position(|t| t.kind == TurnKind::AssistantText && crate::engine::is_injected(t))
            .unwrap();
        let hidden = v.conversations[at + 2].tool_name.clone().unwrap();
        assert!(!tools_available_at(&v, at).iter().any(|t| t.name == hidden));
        assert!(tools_available_at(&v, at + 2).iter().any(|t| t.name == hidden));
    }

    #[test]
    fn wrong_tool_needs_two_tools_and_a_match() {
        let gw = Gateway::offline();
        let m = HybridMatcher::new(&gw);
        let d = dialogue();
        let solo = ToolPool::from_tools("Demo", vec![pool().tools[0].clone()]).unwrap();
        assert!(inject_wrong_tool(&d, &solo, &m).unwrap().is_none());
        let s = m.score_text("get_case", "get_case").unwrap();
        assert!((s.combined - 1.0).abs() < 1e-9);
        let strict = HybridMatcher { threshold: 1.1, ..HybridMatcher::new(&gw) };
        assert!(inject_wrong_tool(&d, &pool(), &strict).unwrap().is_none());
        let loose = HybridMatcher { threshold: -1.0, ..HybridMatcher::new(&gw) };
        let v = inject_wrong_tool(&d, &pool(), &loose).unwrap().unwrap();
        originals_recovered(&d, &v);
    }

    #[test]
    fn injection_gates() {
        let gw = Gateway::offline();
        let h = Hardener::new(&gw);
        let ds: Vec<DialogueTranscript> =
            (0..20).map(|i| DialogueTranscript { id: format!("d{i}"), ..dialogue() }).collect();
        let off = InjectionConfig { p_inject: 0.0, ..InjectionConfig::default() };
        assert_eq!(h.inject_errors(&ds, &pool(), &off).unwrap(), ds);
        let simple = InjectionConfig { p_inject: 1.0, complex_share: 0.0, ..InjectionConfig::default() };
        let out = h.inject_errors(&ds, &pool(), &simple).unwrap();
        assert_eq!(out.len(), 40);
        assert!(out.iter().filter(|d| d.modified).all(|d| d.injection_mode.as_deref() == Some("schema_violation")));
    }

    #[test]
    fn masking_round_trips() {
        let d = dialogue();
        let m = mask_schema_names(&d, 4);
        assert_eq!(m, mask_schema_names(&d, 4));
        let map = m.masking.clone().unwrap();
        let targets: BTreeSet<&String> = map.values().collect();
        assert_eq!(targets.len(), 3);
        assert!(m.tools.iter().all(|t| t.name.starts_with("func_")));
        assert!(m.tool_calls().all(|t| t.content.starts_with("func_")));
        assert_eq!(m.tools[0].description, d.tools[0].description);
        assert_eq!(unmask_schema_names(&m), d);
    }

    #[test]
    fn paraphrase_keeps_values() {
        let gw = Gateway::offline();
        let d = dialogue();
        let p = Hardener::new(&gw).paraphrase_user_turns(&d, 2).unwrap();
        assert!(p.conversations[1].content.contains("acct-77"));
        assert_eq!(p.conversations[2..], d.conversations[2..]);
    }
}
