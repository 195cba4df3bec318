//! Inputs for the criterion benches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use toolweave_core::graph::{Edge, EdgeValidation, ToolGraph};
use toolweave_core::{ParamSchema, ToolPool, ToolSpec};

const WALKTHROUGH_TOOLS: &str = include_str!("../../core/fixtures/walkthrough/tools.jsonl");

pub fn walkthrough_pool() -> ToolPool {
    ToolPool::from_jsonl("Customer Support", WALKTHROUGH_TOOLS).expect("bundled tools parse")
}

/// Random DAG on `n` single-field tools with edge probability `p`.
pub fn random_dag(seed: u64, n: usize, p: f64) -> ToolGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tools = (0..n)
        .map(|i| {
            ToolSpec::new(format!("n{i}"), "node")
                .param("x", ParamSchema::string(), true)
                .result("x", ParamSchema::string())
        })
        .collect();
    let mut g = ToolGraph::new(ToolPool::from_tools("Bench", tools).expect("distinct names"));
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(p) {
                g.add_edge(Edge {
                    from_tool: format!("n{i}"),
                    output_name: "x".into(),
                    to_tool: format!("n{j}"),
                    input_name: "x".into(),
                    validation: EdgeValidation::ExactName,
                });
            }
        }
    }
    g
}

pub fn random_scores(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(0.0..10.0)).collect()
}
