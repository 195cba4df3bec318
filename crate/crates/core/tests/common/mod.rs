//! Fixture loaders and random generators shared by the integration tests.
#![allow(dead_code)]

use std::fs;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{Map, Value};

use toolweave_core::engine::{DialogueTranscript, Engine, EngineSettings};
use toolweave_core::graph::{Edge, EdgeValidation, ToolGraph};
use toolweave_core::planner::{DialoguePlan, Planner, PlannerSettings};
use toolweave_core::sampler::{GoalRecord, WorkflowSample};
use toolweave_core::{Gateway, ParamSchema, ToolPool, ToolSpec, TypeTag};

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(rel)
}

pub fn read(rel: &str) -> String {
    fs::read_to_string(fixture(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

pub fn walkthrough_pool() -> ToolPool {
    ToolPool::from_jsonl("Customer Support", &read("walkthrough/tools.jsonl")).unwrap()
}

pub fn walkthrough_graph() -> ToolGraph {
    ToolGraph::from_jsonl(walkthrough_pool(), &read("walkthrough/graph.jsonl")).unwrap()
}

pub fn walkthrough_plan() -> DialoguePlan {
    serde_json::from_str(&read("walkthrough/plan.json")).unwrap()
}

pub fn walkthrough_transcript() -> DialogueTranscript {
    serde_json::from_str(&read("walkthrough/transcript.json")).unwrap()
}

pub fn ecommerce_graph() -> ToolGraph {
    let pool = ToolPool::from_jsonl("E-commerce", &read("ecommerce/tools.jsonl")).unwrap();
    ToolGraph::from_jsonl(pool, &read("ecommerce/graph.jsonl")).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_leaf(rng: &mut ChaCha8Rng) -> ParamSchema {
    match rng.gen_range(0..6) {
        0 => ParamSchema::scalar(TypeTag::Integer),
        1 => ParamSchema::scalar(TypeTag::Number),
        2 => ParamSchema::scalar(TypeTag::Boolean),
        3 => ParamSchema::scalar(TypeTag::Date),
        4 => ParamSchema::string().with_enum(["low", "high"]),
        _ => ParamSchema::string(),
    }
}

fn random_schema(rng: &mut ChaCha8Rng, names: &[&str], depth: usize) -> ParamSchema {
    match (depth, rng.gen_range(0..5)) {
        (0, _) | (_, 0..=2) => random_leaf(rng),
        (_, 3) => {
            let n = rng.gen_range(0..3);
            let children = (0..n)
                .map(|_| (names.choose(rng).unwrap().to_string(), random_schema(rng, names, depth - 1)))
                .collect();
            ParamSchema::object(children)
        }
        _ => ParamSchema::array(random_schema(rng, names, depth - 1)),
    }
}

/// A pool of up to `max_tools` tools with nested parameters drawn from a
/// small shared vocabulary, so inputs and outputs often share names.
pub fn random_pool(rng: &mut ChaCha8Rng, max_tools: usize) -> ToolPool {
    const NAMES: [&str; 10] =
        ["order_id", "status", "amount", "items", "note", "customer_id", "region", "created_at", "tags", "priority"];
    let n = rng.gen_range(1..=max_tools);
    let mut tools = Vec::new();
    for i in 0..n {
        let mut t = ToolSpec::new(format!("tool_{i}"), format!("random tool {i}"));
        let inputs = rng.gen_range(0..5);
        for name in NAMES.choose_multiple(rng, inputs) {
            let schema = random_schema(rng, &NAMES, 2);
            t = t.param(name, schema, rng.gen_bool(0.5));
        }
        let outputs = rng.gen_range(0..4);
        for name in NAMES.choose_multiple(rng, outputs) {
            let schema = random_schema(rng, &NAMES, 2);
            t = t.result(name, schema);
        }
        tools.push(t);
    }
    ToolPool::from_tools("Random", tools).unwrap()
}

/// Random DAG over `n` nodes as an edge list with `from < to`.
pub fn random_dag(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(p) {
                edges.push((order[i], order[j]));
            }
        }
    }
    edges
}

/// A tool graph with one bare tool per node and one edge per pair.
pub fn dag_graph(n: usize, edges: &[(usize, usize)]) -> ToolGraph {
    let tools = (0..n)
        .map(|i| {
            ToolSpec::new(format!("n{i}"), "node")
                .param("x", ParamSchema::string(), true)
                .result("x", ParamSchema::string())
        })
        .collect();
    let mut g = ToolGraph::new(ToolPool::from_tools("Dag", tools).unwrap());
    for &(a, b) in edges {
        g.add_edge(Edge {
            from_tool: format!("n{a}"),
            output_name: "x".into(),
            to_tool: format!("n{b}"),
            input_name: "x".into(),
            validation: EdgeValidation::ExactName,
        });
    }
    g
}

/// A chained tool graph: tool `i` produces `e{i}_id` and may consume the
/// ids of earlier tools. Enum domains are distinct per tool so that value
/// equality between calls only arises from real data flow.
pub fn random_chain_graph(rng: &mut ChaCha8Rng, n: usize) -> ToolGraph {
    let mut tools = Vec::new();
    let mut links = Vec::new();
    for i in 0..n {
        let mut t = ToolSpec::new(format!("step_{i}_record"), format!("handles record kind {i}"));
        let mut upstream = false;
        for j in 0..i {
            if rng.gen_bool(if j + 1 == i { 0.8 } else { 0.25 }) {
                t = t.param(&format!("e{j}_id"), ParamSchema::string(), true);
                links.push((j, i));
                upstream = true;
            }
        }
        if !upstream || rng.gen_bool(0.5) {
            t = t.param(&format!("note_{i}"), ParamSchema::string(), true);
        }
        if rng.gen_bool(0.5) {
            let vals = [format!("p{i}_low"), format!("p{i}_high")];
            t = t.param(&format!("priority_{i}"), ParamSchema::string().with_enum(vals), rng.gen_bool(0.5));
        }
        t = t.result(&format!("e{i}_id"), ParamSchema::string());
        let states = [format!("s{i}_open"), format!("s{i}_done")];
        t = t.result(&format!("state_{i}"), ParamSchema::string().with_enum(states));
        if rng.gen_bool(0.3) {
            let entry: toolweave_core::schema::Properties =
                [(format!("e{i}_id"), ParamSchema::string()), (format!("label_{i}"), ParamSchema::string())]
                    .into_iter()
                    .collect();
            t = t.result(&format!("entries_{i}"), ParamSchema::array(ParamSchema::object(entry)));
        }
        tools.push(t);
    }
    let mut g = ToolGraph::new(ToolPool::from_tools("Chain", tools).unwrap());
    for (j, i) in links {
        g.add_edge(Edge {
            from_tool: format!("step_{j}_record"),
            output_name: format!("e{j}_id"),
            to_tool: format!("step_{i}_record"),
            input_name: format!("e{j}_id"),
            validation: EdgeValidation::ExactName,
        });
    }
    g
}

/// A random walk along edges, of 2 to `max_len` tools when possible.
pub fn random_path(rng: &mut ChaCha8Rng, g: &ToolGraph, max_len: usize) -> Vec<String> {
    let names: Vec<String> = g.nodes.names().map(String::from).collect();
    let starts: Vec<&String> = names.iter().filter(|n| !g.successors(n).is_empty()).collect();
    let Some(start) = starts.choose(rng) else {
        return vec![names[0].clone()];
    };
    let mut path = vec![start.to_string()];
    let target = rng.gen_range(2..=max_len.max(2));
    while path.len() < target {
        let last = path.last().unwrap();
        let next: Vec<&str> = g.successors(last).into_iter().filter(|s| !path.iter().any(|p| p == s)).collect();
        match next.choose(rng) {
            Some(s) => path.push(s.to_string()),
            None => break,
        }
    }
    path
}

pub fn goal_for(path: Vec<String>) -> GoalRecord {
    let text = format!("Work through {} in order.", path.join(", "));
    GoalRecord {
        workflow: WorkflowSample::linear(path),
        goal_text: text,
        coherence: 2,
        relevance: 2,
        dataflow_score: 1.0,
        length_bonus: 1.0,
        final_score: 3.1,
        metadata: Map::new(),
    }
}

/// `count` plans over fresh random chain graphs.
pub fn random_plans(seed: u64, count: usize, p_clar: f64) -> Vec<(DialoguePlan, ToolGraph)> {
    let gw = Gateway::offline();
    let planner = Planner::new(&gw, PlannerSettings { p_clar, ..PlannerSettings::default() });
    let mut rng = rng(seed);
    (0..count)
        .map(|i| {
            let n = rng.gen_range(3..=7);
            let g = random_chain_graph(&mut rng, n);
            let path = random_path(&mut rng, &g, 5);
            let plan = planner
                .compile(&format!("plan-{seed}-{i}"), &goal_for(path), &g, rng.gen())
                .expect("offline planning succeeds");
            (plan, g)
        })
        .collect()
}

/// `count` engine-generated dialogues with their plans, under the offline
/// model.
pub fn random_dialogues(seed: u64, count: usize) -> Vec<(DialogueTranscript, DialoguePlan, ToolGraph)> {
    let gw = Gateway::offline();
    let engine = Engine::new(&gw, EngineSettings::default());
    let mut rng = rng(seed ^ 0x5eed);
    random_plans(seed, count, 0.35)
        .into_iter()
        .map(|(plan, g)| {
            let (d, _) =
                engine.synthesize_dialogue(&plan, &g.nodes, rng.gen()).unwrap_or_else(|e| panic!("{}: {e}", plan.id));
            (d, plan, g)
        })
        .collect()
}

/// Every bare property name in a JSON properties document, nested ones
/// included.
pub fn doc_names(props: &Value, out: &mut std::collections::BTreeSet<String>) {
    let Some(obj) = props.as_object() else { return };
    for (name, schema) in obj {
        out.insert(name.clone());
        doc_children(schema, out);
    }
}

fn doc_children(schema: &Value, out: &mut std::collections::BTreeSet<String>) {
    if let Some(p) = schema.get("properties") {
        doc_names(p, out);
    }
    if let Some(items) = schema.get("items") {
        doc_children(items, out);
    }
}
