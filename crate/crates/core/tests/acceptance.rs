//! Acceptance suite. Runs without the libtest harness so that every
//! criterion prints one PASS/FAIL line, even when captured output is hidden.

mod common;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::Rng;
use serde_json::{json, Map, Value};

use toolweave_core::engine::{call_sites, DialogueTranscript, Engine, EngineSettings, Turn, TurnKind};
use toolweave_core::hardener::{
    inject_cascading_failure, Hardener, InjectionConfig, InjectionMode, MISSING_DEPENDENCY,
};
use toolweave_core::pipeline::{Pipeline, PipelineConfig, DIALOGUES, FINETUNE, GRAPH, TOOLS};
use toolweave_core::planner::{
    resolve_param_plan, validate_plan, DialoguePlan, Marker, Planner, PlannerSettings, StepRole,
};
use toolweave_core::quality::{
    api_metrics, detect_hallucinations, dialogue_stats, plan_profile, segment_profile, MetricSettings,
};
use toolweave_core::sampler::{mmr_select, Sampler, SamplerSettings};
use toolweave_core::{Gateway, ParamSchema, ToolPool, ToolSpec, TypeTag, ViolationKind};

use common::*;

type Check = fn() -> Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// 1. Metric oracle equivalence.

struct Counted {
    rpr: f64,
    cau: f64,
    ic: f64,
}

/// Recomputes the pool metrics from the serialized tool documents.
fn brute_force_metrics(pool: &ToolPool) -> Counted {
    let docs: Vec<Value> = pool.tools.iter().map(ToolSpec::to_value).collect();
    let mut outputs = BTreeSet::new();
    for d in &docs {
        doc_names(&d["results"]["properties"], &mut outputs);
    }
    let (mut rpr, mut cau, mut ic) = (0.0, 0usize, 0usize);
    for d in &docs {
        let inputs = d["parameters"]["properties"].as_object().unwrap();
        let required = d["parameters"]["required"].as_array().unwrap();
        rpr += if inputs.is_empty() { 1.0 } else { required.len() as f64 / inputs.len() as f64 };
        if inputs.values().any(|s| matches!(s["type"].as_str(), Some("object" | "array"))) {
            cau += 1;
        }
        ic += inputs.keys().filter(|k| outputs.contains(*k)).count();
    }
    let n = docs.len() as f64;
    Counted { rpr: rpr / n, cau: cau as f64 / n, ic: ic as f64 / n }
}

fn metric_oracle() -> Result<String, String> {
    let oracle: Value = serde_json::from_str(&read("walkthrough/metrics_oracle.json")).unwrap();
    let g = walkthrough_graph();
    let r = api_metrics(&g.nodes, &g, &MetricSettings::default());
    let hand = &oracle["tools"];
    let (mut rpr, mut cau, mut ic) = (0.0, 0.0, 0.0);
    for (name, t) in hand.as_object().unwrap() {
        let inputs = t["inputs"].as_f64().unwrap();
        rpr += t["required"].as_f64().unwrap() / inputs;
        cau += f64::from(t["complex_inputs"].as_u64().unwrap() > 0);
        ic += t["inputs_named_as_outputs"].as_array().unwrap().len() as f64;
        ensure(g.nodes.get(name).is_some_and(|s| s.parameters.len() as f64 == inputs), || {
            format!("{name}: input count differs from the hand count")
        })?;
    }
    let n = hand.as_object().unwrap().len() as f64;
    for (label, got, want, hand_value) in
        [("RPR", r.rpr, 49.0 / 75.0, rpr / n), ("CAU", r.cau, 0.2, cau / n), ("IC", r.ic, 0.6, ic / n)]
    {
        ensure((got - want).abs() <= 1e-9 && (got - hand_value).abs() <= 1e-9, || {
            format!("{label} = {got}, expected {want} (hand count {hand_value})")
        })?;
        ensure((oracle[label.to_lowercase()].as_f64().unwrap() - got).abs() <= 1e-9, || {
            format!("{label} disagrees with the committed oracle")
        })?;
    }
    let mut rng = rng(1);
    let trials = 300;
    for i in 0..trials {
        let pool = random_pool(&mut rng, 10);
        let g = toolweave_core::graph::ToolGraph::new(pool.clone());
        let r = api_metrics(&pool, &g, &MetricSettings::default());
        let b = brute_force_metrics(&pool);
        ensure(r.rpr == b.rpr && r.cau == b.cau && r.ic == b.ic, || {
            format!("random pool {i}: ({}, {}, {}) vs oracle ({}, {}, {})", r.rpr, r.cau, r.ic, b.rpr, b.cau, b.ic)
        })?;
    }
    Ok(format!("RPR {:.6}, CAU {:.2}, IC {:.2}; {trials} random pools agree", r.rpr, r.cau, r.ic))
}

// 2. Longest chain.

/// Longest path in nodes by dynamic programming over a Kahn ordering.
fn dp_longest(n: usize, edges: &[(usize, usize)]) -> usize {
    let mut indeg = vec![0usize; n];
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        indeg[b] += 1;
    }
    let mut queue: Vec<usize> = (0..n).filter(|&v| indeg[v] == 0).collect();
    let mut order = Vec::new();
    while let Some(v) = queue.pop() {
        order.push(v);
        for &w in &adj[v] {
            indeg[w] -= 1;
            if indeg[w] == 0 {
                queue.push(w);
            }
        }
    }
    assert_eq!(order.len(), n, "input is acyclic");
    let mut best = vec![1usize; n];
    for &v in &order {
        for &w in &adj[v] {
            best[w] = best[w].max(best[v] + 1);
        }
    }
    best.into_iter().max().unwrap_or(0)
}

fn longest_chain() -> Result<String, String> {
    let mut rng = rng(2);
    let mut longest = 0;
    for i in 0..200 {
        let n = rng.gen_range(1..=12);
        let p = rng.gen_range(0.05..0.6);
        let edges = random_dag(&mut rng, n, p);
        let dfs = dag_graph(n, &edges).longest_simple_path(usize::MAX);
        let dp = dp_longest(n, &edges);
        ensure(dfs == dp, || format!("DAG {i} ({n} nodes, {} edges): DFS {dfs}, DP {dp}", edges.len()))?;
        longest = longest.max(dp);
    }
    Ok(format!("200 DAGs agree; longest chain seen {longest}"))
}

// 3. Plan invariants.

fn forward_reference_mutant(plan: &DialoguePlan) -> Option<DialoguePlan> {
    let mut m = plan.clone();
    let mut called: Vec<String> = Vec::new();
    for step in m.steps.iter_mut() {
        if step.role != StepRole::CallTool {
            continue;
        }
        let me = step.tools[0].clone();
        let target = plan.tool_path.iter().find(|t| !called.contains(t))?.clone();
        if let Some((_, marker)) = step.params.iter_mut().next() {
            *marker = Marker::output(&target, "anything").to_string();
            return Some(m);
        }
        called.push(me);
    }
    None
}

fn coverage_mutant(plan: &DialoguePlan) -> DialoguePlan {
    let mut m = plan.clone();
    let last = m.partitions.last_mut().unwrap();
    last.pop();
    if last.is_empty() {
        m.partitions.pop();
    }
    m
}

fn pairing_mutant(plan: &DialoguePlan) -> Option<DialoguePlan> {
    let i = plan.steps.iter().position(|s| s.role == StepRole::UserResponseToClarification)?;
    let mut m = plan.clone();
    m.steps.remove(i);
    for (k, s) in m.steps.iter_mut().enumerate() {
        s.step_idx = k + 1;
    }
    Some(m)
}

fn plan_invariants() -> Result<String, String> {
    let mut total = 0;
    let mut mutants: BTreeMap<&str, usize> = BTreeMap::new();
    for (seed, p_clar, count) in [(30u64, 0.0, 334usize), (31, 0.35, 333), (32, 1.0, 333)] {
        for (plan, g) in random_plans(seed, count, p_clar) {
            total += 1;
            let r = validate_plan(&plan, &g.nodes);
            ensure(r.ok, || format!("{} fails validation: {:?}", plan.id, r.violations))?;
            let clarified = plan.steps.iter().any(|s| s.role == StepRole::AssistantClarification);
            let asked_user = plan.steps.iter().filter(|s| s.role == StepRole::UserUtterance).any(|s| {
                s.params
                    .keys()
                    .any(|k| k.split_once('.').is_some_and(|(t, p)| g.nodes.get(t).is_some_and(|t| t.is_required(p))))
            });
            ensure(p_clar != 0.0 || !clarified, || format!("{} clarifies at p_clar = 0", plan.id))?;
            ensure(p_clar != 1.0 || !asked_user, || {
                format!("{} gives required values upfront at p_clar = 1", plan.id)
            })?;

            if let Some(m) = forward_reference_mutant(&plan) {
                ensure(validate_plan(&m, &g.nodes).has(ViolationKind::ForwardReference), || {
                    format!("{}: forward reference not detected", plan.id)
                })?;
                *mutants.entry("forward-reference").or_default() += 1;
            }
            let m = coverage_mutant(&plan);
            ensure(validate_plan(&m, &g.nodes).has(ViolationKind::PartitionCoverage), || {
                format!("{}: coverage gap not detected", plan.id)
            })?;
            *mutants.entry("partition-coverage").or_default() += 1;
            if let Some(m) = pairing_mutant(&plan) {
                ensure(validate_plan(&m, &g.nodes).has(ViolationKind::ClarificationPairing), || {
                    format!("{}: unpaired clarification not detected", plan.id)
                })?;
                *mutants.entry("clarification-pairing").or_default() += 1;
            }
        }
    }
    ensure(mutants.len() == 3, || format!("some invariant had no mutant: {mutants:?}"))?;
    Ok(format!("{total} plans valid; mutants detected {mutants:?}"))
}

// 4. Engine faithfulness under replay.

fn replay_faithfulness() -> Result<String, String> {
    let gw = Gateway::replay(fixture("walkthrough/cassette.jsonl")).map_err(|e| e.to_string())?;
    let plan = walkthrough_plan();
    let pool = walkthrough_pool();
    let (d, memory) =
        Engine::new(&gw, EngineSettings::default()).synthesize_dialogue(&plan, &pool, 0).map_err(|e| e.to_string())?;
    let calls: Vec<&Turn> = d.tool_calls().collect();
    ensure(calls.len() == 5, || format!("{} tool calls", calls.len()))?;
    let mut checked = 0;
    for (step, call) in plan.call_steps().zip(&calls) {
        let args = call.args.as_ref().unwrap();
        for (key, m) in &step.params {
            let Some(Marker::Output { tool, output }) = Marker::parse(m) else { continue };
            let param = key.split_once('.').unwrap().1;
            let stored = memory
                .tool_outputs
                .get(&format!("{tool}.{output}"))
                .ok_or_else(|| format!("memory has no {tool}.{output}"))?;
            let given = args.get(param).ok_or_else(|| format!("{key} missing from the call"))?;
            ensure(serde_json::to_string(given).unwrap() == serde_json::to_string(stored).unwrap(), || {
                format!("{key} = {given}, memory holds {stored}")
            })?;
            checked += 1;
        }
    }
    let h = detect_hallucinations(&d, None).map_err(|e| e.to_string())?;
    ensure(h.clean, || format!("hallucination flags: {:?}", h.findings))?;
    ensure(checked > 0, || "no derived arguments in the plan".into())?;
    Ok(format!("5 calls, {checked} derived arguments byte-equal, no flags"))
}

// 5. Structure statistics.

fn structure_stats() -> Result<String, String> {
    let t = walkthrough_transcript();
    let plan = walkthrough_plan();
    for (label, s) in [
        ("traced", dialogue_stats(std::slice::from_ref(&t), None)),
        ("planned", dialogue_stats(std::slice::from_ref(&t), Some(std::slice::from_ref(&plan)))),
    ] {
        ensure(s.min_turns == 3 && s.max_turns == 3, || format!("{label}: {} turns", s.max_turns))?;
        ensure(s.min_tool_calls == 5, || format!("{label}: {} calls", s.min_tool_calls))?;
        ensure((s.pct_multi_step - 2.0 / 3.0).abs() < 1e-12, || format!("{label}: multi-step {}", s.pct_multi_step))?;
        ensure((s.pct_true_multi_step - 2.0 / 3.0).abs() < 1e-12, || {
            format!("{label}: true multi-step {}", s.pct_true_multi_step)
        })?;
    }
    let corpus = random_dialogues(50, 500);
    for (d, plan, _) in &corpus {
        let traced = segment_profile(&d.conversations);
        let planned = plan_profile(plan);
        ensure(traced == planned, || format!("{}: traced {traced:?}, planned {planned:?}", d.id))?;
    }
    let multi: usize =
        corpus.iter().map(|(_, p, _)| plan_profile(p).iter().filter(|(c, t)| *c >= 2 && *t).count()).sum();
    Ok(format!("walkthrough 3/5/(2/3)/(2/3); 500 dialogues agree ({multi} true multi-step turns)"))
}

// 6. Injection contracts.

fn ecommerce_dialogues(count: usize) -> (Vec<DialogueTranscript>, ToolPool) {
    let g = ecommerce_graph();
    let gw = Gateway::offline();
    let planner = Planner::new(&gw, PlannerSettings::default());
    let engine = Engine::new(&gw, EngineSettings::default());
    let mut rng = rng(6);
    let out = (0..count)
        .map(|i| {
            let path = random_path(&mut rng, &g, 4);
            let plan = planner.compile(&format!("shop-{i:04}"), &goal_for(path), &g, rng.gen()).unwrap();
            engine.synthesize_dialogue(&plan, &g.nodes, rng.gen()).unwrap().0
        })
        .collect();
    (out, g.nodes)
}

fn strip_injected(d: &DialogueTranscript) -> Vec<Turn> {
    d.conversations
        .iter()
        .filter(|t| !t.meta.get("injected").and_then(Value::as_bool).unwrap_or(false))
        .cloned()
        .collect()
}

fn injection_contracts() -> Result<String, String> {
    let (dialogues, pool) = ecommerce_dialogues(1000);
    let gw = Gateway::offline();
    let h = Hardener::new(&gw);
    let cfg = |p: f64| InjectionConfig { p_inject: p, seed: 66, ..InjectionConfig::default() };
    let none = h.inject_errors(&dialogues, &pool, &cfg(0.0)).map_err(|e| e.to_string())?;
    ensure(none == dialogues, || "p_inject = 0 changed the corpus".into())?;

    let all = h.inject_errors(&dialogues, &pool, &cfg(1.0)).map_err(|e| e.to_string())?;
    let variants: Vec<&DialogueTranscript> = all.iter().filter(|d| d.modified).collect();
    ensure(variants.len() == dialogues.len(), || format!("{} variants at p_inject = 1", variants.len()))?;
    for d in &dialogues {
        let n = variants.iter().filter(|v| v.id.starts_with(&format!("{}-", d.id))).count();
        ensure(n == 1, || format!("{} has {n} variants", d.id))?;
    }

    let half = h.inject_errors(&dialogues, &pool, &cfg(0.5)).map_err(|e| e.to_string())?;
    let k = half.iter().filter(|d| d.modified).count() as f64;
    let sigma = (1000.0f64 * 0.25).sqrt();
    ensure((k - 500.0).abs() <= 3.0 * sigma, || format!("{k} variants at p_inject = 0.5"))?;

    // A three-call run from the e-commerce shipping chain.
    let g = ecommerce_graph();
    let planner = Planner::new(&gw, PlannerSettings::default());
    let path: Vec<String> = ["get_order", "set_mode", "ship_local"].map(String::from).into();
    let goal = goal_for(path.clone());
    let parts = vec![path.clone()];
    let params = resolve_param_plan(&parts, &g, &g.nodes, &goal.goal_text, false).unwrap();
    let plan = planner.weave_plan("ship-run", &goal, path, parts, &params, &g.nodes, 0.0, 3).unwrap();
    let (d, _) = Engine::new(&gw, EngineSettings::default())
        .synthesize_dialogue(&plan, &g.nodes, 3)
        .map_err(|e| e.to_string())?;
    let v = inject_cascading_failure(&d, 9).ok_or("cascading refused a three-call run")?;
    let injected: Vec<&Turn> = v.conversations.iter().filter(|t| t.meta.contains_key("injected")).collect();
    let errors = injected
        .iter()
        .filter(|t| {
            t.result.as_ref().and_then(|r| r.get("error")).is_some_and(|e| e.to_string().contains(MISSING_DEPENDENCY))
        })
        .count();
    ensure(injected.len() == 4 && errors == 2, || format!("{} injected turns, {errors} errors", injected.len()))?;
    ensure(strip_injected(&v) == d.conversations, || "recovery differs from the original run".into())?;
    let order: Vec<&str> = call_sites(&v.conversations, true).iter().map(|s| s.tool(&v.conversations)).collect();
    ensure(order == ["ship_local", "set_mode", "get_order", "set_mode", "ship_local"], || {
        format!("call order {order:?}")
    })?;

    // The walkthrough splits its calls two, one and two per turn.
    ensure(inject_cascading_failure(&walkthrough_transcript(), 9).is_none(), || {
        "cascading accepted a two-call run".into()
    })?;
    let only = InjectionConfig {
        p_inject: 1.0,
        complex_share: 1.0,
        seed: 1,
        enabled_modes: [InjectionMode::Cascading].into_iter().collect(),
    };
    let pool = walkthrough_pool();
    let out = h.inject_errors(&[walkthrough_transcript()], &pool, &only).map_err(|e| e.to_string())?;
    ensure(out.len() == 1, || "cascading-only injection produced a variant for the walkthrough".into())?;
    Ok(format!("identity, 1000/1000 variants, {k} at p = 0.5 (3 sigma = {:.1}), 2 cascading pairs", 3.0 * sigma))
}

// 7. Hallucination detector.

fn payment_dialogue(amount: Value, tool: &str) -> DialogueTranscript {
    let spec = ToolSpec::new("charge_card", "Charge a stored card.")
        .param("payment_amount", ParamSchema::scalar(TypeTag::Number), true)
        .param("card_id", ParamSchema::string(), true)
        .result("charge_id", ParamSchema::string());
    let mut args = Map::new();
    args.insert("payment_amount".into(), amount);
    args.insert("card_id".into(), json!("card-7731"));
    DialogueTranscript {
        id: "payment".into(),
        plan_ref: "payment".into(),
        seed: 0,
        domain: "Online Banking".into(),
        goal_text: "Pay a bill".into(),
        tools: vec![spec],
        conversations: vec![
            Turn::text(TurnKind::User, "Charge the $201.40 to my credit card card-7731.", 1),
            Turn::call(tool, args, 2),
            Turn::response(tool, [("charge_id".to_string(), json!("ch-1"))].into_iter().collect(), 2),
            Turn::text(TurnKind::AssistantText, "Done.", 3),
        ],
        modified: false,
        injection_mode: None,
        masking: None,
    }
}

fn hallucination_detector() -> Result<String, String> {
    let r = detect_hallucinations(&payment_dialogue(json!(20140), "charge_card"), None).unwrap();
    ensure(r.param_value && !r.tool_name && !r.param_name, || format!("currency example: {r:?}"))?;
    let ok = detect_hallucinations(&payment_dialogue(json!(201.40), "charge_card"), None).unwrap();
    ensure(ok.clean, || format!("faithful amount flagged: {:?}", ok.findings))?;
    let r = detect_hallucinations(&payment_dialogue(json!(201.40), "refund_card"), None).unwrap();
    ensure(r.tool_name, || "undeclared tool not flagged".into())?;
    let corpus = random_dialogues(70, 500);
    let mut flagged = Vec::new();
    for (d, _, _) in &corpus {
        let r = detect_hallucinations(d, None).unwrap();
        if !r.clean {
            flagged.push(format!("{}: {:?}", d.id, r.findings));
        }
    }
    ensure(flagged.is_empty(), || format!("{} false positives, first {}", flagged.len(), flagged[0]))?;
    Ok("currency example and undeclared tool flagged; 0/500 false positives".into())
}

// 8. End-to-end determinism.

fn end_to_end() -> Result<String, String> {
    let tmp = tempfile::tempdir().unwrap();
    for f in ["config.json", "cassette.jsonl"] {
        fs::copy(fixture("e2e").join(f), tmp.path().join(f)).unwrap();
    }
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let mut cfg = PipelineConfig::load(&tmp.path().join("config.json")).map_err(|e| e.to_string())?;
        cfg.output_dir = tmp.path().join(run);
        let summary = Pipeline::new(cfg.clone()).and_then(|p| p.run_all(false)).map_err(|e| e.to_string())?;
        ensure(summary.exit_code() == 0 && summary.dialogues > 0, || format!("run {run}: {summary:?}"))?;
        let dir = cfg.domain_dir(&cfg.domains[0]);
        for f in [TOOLS, GRAPH] {
            let golden = fs::read(fixture("e2e/golden").join(f)).unwrap();
            ensure(fs::read(dir.join(f)).unwrap() == golden, || format!("run {run}: {f} differs from golden"))?;
        }
        outputs.push([DIALOGUES, FINETUNE].map(|f| fs::read(cfg.output_dir.join(f)).unwrap()));
    }
    ensure(outputs[0] == outputs[1], || "replayed runs differ".into())?;
    let lines = outputs[0][1].iter().filter(|&&b| b == b'\n').count();
    Ok(format!("two replayed runs byte-identical ({lines} fine-tuning records)"))
}

// 9. MMR and scoring.

/// Greedy MMR by exhaustive search: among all selection orders, the one
/// whose sequence of marginal values is lexicographically largest.
fn exhaustive_mmr(scores: &[f64], sim: &[Vec<f64>], k: usize, lambda: f64) -> Vec<usize> {
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let rel = |i: usize| if hi > lo { (scores[i] - lo) / (hi - lo) } else { 1.0 };
    fn walk(
        prefix: &mut Vec<usize>,
        values: &mut Vec<f64>,
        k: usize,
        n: usize,
        gain: &dyn Fn(&[usize], usize) -> f64,
        best: &mut Option<(Vec<f64>, Vec<usize>)>,
    ) {
        if prefix.len() == k {
            let better = match best {
                None => true,
                Some((bv, _)) => values.as_slice().partial_cmp(bv.as_slice()) == Some(std::cmp::Ordering::Greater),
            };
            if better {
                *best = Some((values.clone(), prefix.clone()));
            }
            return;
        }
        for i in 0..n {
            if prefix.contains(&i) {
                continue;
            }
            values.push(gain(prefix, i));
            prefix.push(i);
            walk(prefix, values, k, n, gain, best);
            prefix.pop();
            values.pop();
        }
    }
    let gain = |sel: &[usize], i: usize| {
        if sel.is_empty() {
            rel(i)
        } else {
            let max_sim = sel.iter().map(|&j| sim[i][j]).fold(f64::NEG_INFINITY, f64::max);
            lambda * rel(i) - (1.0 - lambda) * max_sim
        }
    };
    let mut best = None;
    walk(&mut Vec::new(), &mut Vec::new(), k.min(scores.len()), scores.len(), &gain, &mut best);
    best.map(|(_, s)| s).unwrap_or_default()
}

fn mmr_and_scoring() -> Result<String, String> {
    let gw = Gateway::offline();
    let settings = SamplerSettings { workers: 1, ..SamplerSettings::default() };
    let sampler = Sampler::new(&gw, settings.clone()).map_err(|e| e.to_string())?;
    let mut records = 0;
    for g in [ecommerce_graph(), walkthrough_graph()] {
        let (goals, _) = sampler.sample(&g).map_err(|e| e.to_string())?;
        for r in &goals {
            let want = r.recomputed_score(&settings.weights);
            ensure((r.final_score - want).abs() <= 1e-9, || format!("{}: {} vs {want}", r.goal_text, r.final_score))?;
        }
        records += goals.len();
    }
    ensure(records > 0, || "sampler produced no goals".into())?;

    let mut rng = rng(9);
    for trial in 0..200 {
        let n = rng.gen_range(1..=8);
        let k = rng.gen_range(1..=n);
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..10.0)).collect();
        let mut sim = vec![vec![1.0; n]; n];
        for i in 0..n {
            for j in 0..i {
                let s = rng.gen_range(-0.2..1.0);
                sim[i][j] = s;
                sim[j][i] = s;
            }
        }
        let f = |i: usize, j: usize| sim[i][j];
        let mut top: Vec<usize> = (0..n).collect();
        top.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        top.truncate(k);
        let got = mmr_select(&scores, &f, k, 1.0);
        ensure(got == top, || format!("trial {trial}: lambda = 1 gave {got:?}, top-K {top:?}"))?;
        let lambda = rng.gen_range(0.0..1.0);
        let got = mmr_select(&scores, &f, k, lambda);
        let want = exhaustive_mmr(&scores, &sim, k, lambda);
        ensure(got == want, || format!("trial {trial}: {got:?} vs exhaustive {want:?}"))?;
    }
    Ok(format!("{records} goal scores recompose; 200 MMR trials agree"))
}

fn main() {
    let criteria: [(&str, Duration, Check); 9] = [
        ("1 metric oracle", Duration::from_secs(1), metric_oracle),
        ("2 longest chain", Duration::from_secs(5), longest_chain),
        ("3 plan invariants", Duration::from_secs(30), plan_invariants),
        ("4 replay faithfulness", Duration::from_secs(5), replay_faithfulness),
        ("5 structure statistics", Duration::from_secs(10), structure_stats),
        ("6 injection contracts", Duration::from_secs(30), injection_contracts),
        ("7 hallucination detector", Duration::from_secs(10), hallucination_detector),
        ("8 end-to-end determinism", Duration::from_secs(60), end_to_end),
        ("9 MMR and scoring", Duration::from_secs(60), mmr_and_scoring),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for (name, budget, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let took = start.elapsed();
        let outcome = outcome.and_then(|msg| {
            if took <= budget {
                Ok(msg)
            } else {
                Err(format!("{msg}; took {took:.2?}, budget {budget:?}"))
            }
        });
        match outcome {
            Ok(msg) => {
                *counts.entry("pass").or_default() += 1;
                println!("PASS criterion {name} ({took:.2?}): {msg}");
            }
            Err(msg) => {
                failed += 1;
                println!("FAIL criterion {name} ({took:.2?}): {msg}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", counts.get("pass").copied().unwrap_or(0));
    if failed > 0 {
        std::process::exit(1);
    }
}
