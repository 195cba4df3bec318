//! Directed tool graph whose edges carry validated output → input links.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::schema::{flatten_output_names, SchemaError, ToolPool};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeValidation {
    ExactName,
    LlmValidated,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub from_tool: String,
    pub output_name: String,
    pub to_tool: String,
    pub input_name: String,
    pub validation: EdgeValidation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToolGraph {
    pub nodes: ToolPool,
    pub edges: Vec<Edge>,
}

pub const DEFAULT_DEPTH_CAP: usize = 32;

impl ToolGraph {
    pub fn new(nodes: ToolPool) -> Self {
        ToolGraph { nodes, edges: Vec::new() }
    }

    /// Builds a graph, rejecting edges that break the membership invariants.
    pub fn with_edges(nodes: ToolPool, edges: Vec<Edge>) -> Result<Self, SchemaError> {
        let g = ToolGraph { nodes, edges };
        if let Some(msg) = g.invariant_violations().into_iter().next() {
            return Err(SchemaError::Invariant { path: "edges".into(), message: msg });
        }
        Ok(g)
    }

    /// Human-readable description of every edge that violates an invariant.
    pub fn invariant_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for e in &self.edges {
            let (Some(from), Some(to)) = (self.nodes.get(&e.from_tool), self.nodes.get(&e.to_tool)) else {
                out.push(format!("edge {} -> {} names an unknown tool", e.from_tool, e.to_tool));
                continue;
            };
            if e.from_tool == e.to_tool {
                out.push(format!("self-loop on {}", e.from_tool));
            }
            if !flatten_output_names(from).contains(&e.output_name) {
                out.push(format!("{} has no output {}", e.from_tool, e.output_name));
            }
            if !to.parameters.contains_key(&e.input_name) {
                out.push(format!("{} has no parameter {}", e.to_tool, e.input_name));
            }
        }
        out
    }

    pub fn add_edge(&mut self, e: Edge) {
        if !self.edges.iter().any(|x| {
            x.from_tool == e.from_tool
                && x.output_name == e.output_name
                && x.to_tool == e.to_tool
                && x.input_name == e.input_name
        }) {
            self.edges.push(e);
        }
    }

    fn position(&self, name: &str) -> usize {
        self.nodes.names().position(|n| n == name).unwrap_or(usize::MAX)
    }

    /// Distinct successors in pool order.
    pub fn successors(&self, tool: &str) -> Vec<&str> {
        let set: BTreeSet<&str> =
            self.edges.iter().filter(|e| e.from_tool == tool).map(|e| e.to_tool.as_str()).collect();
        let mut v: Vec<&str> = set.into_iter().collect();
        v.sort_by_key(|n| self.position(n));
        v
    }

    /// Distinct predecessors in pool order.
    pub fn predecessors(&self, tool: &str) -> Vec<&str> {
        let set: BTreeSet<&str> =
            self.edges.iter().filter(|e| e.to_tool == tool).map(|e| e.from_tool.as_str()).collect();
        let mut v: Vec<&str> = set.into_iter().collect();
        v.sort_by_key(|n| self.position(n));
        v
    }

    pub fn has_edge(&self, from: &str, to: &str) -> bool {
        self.edges.iter().any(|e| e.from_tool == from && e.to_tool == to)
    }

    pub fn edges_between<'a>(&'a self, from: &'a str, to: &'a str) -> impl Iterator<Item = &'a Edge> + 'a {
        self.edges.iter().filter(move |e| e.from_tool == from && e.to_tool == to)
    }

    /// Node count of the longest simple path, by exhaustive DFS. Paths stop
    /// growing at `depth_cap` nodes. A nonempty graph without edges gives 1.
    pub fn longest_simple_path(&self, depth_cap: usize) -> usize {
        let names: Vec<&str> = self.nodes.names().collect();
        let adj: Vec<Vec<usize>> = names
            .iter()
            .map(|n| self.successors(n).into_iter().map(|s| names.iter().position(|x| *x == s).unwrap()).collect())
            .collect();
        fn dfs(v: usize, adj: &[Vec<usize>], seen: &mut [bool], depth: usize, cap: usize, best: &mut usize) {
            *best = (*best).max(depth);
            if depth >= cap {
                return;
            }
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    dfs(w, adj, seen, depth + 1, cap, best);
                    seen[w] = false;
                }
            }
        }
        let mut best = 0;
        let mut seen = vec![false; names.len()];
        for v in 0..names.len() {
            seen[v] = true;
            dfs(v, &adj, &mut seen, 1, depth_cap.max(1), &mut best);
            seen[v] = false;
        }
        best
    }

    /// One edge record per line.
    pub fn edges_to_jsonl(&self) -> String {
        self.edges.iter().map(|e| serde_json::to_string(e).expect("edge serializes") + "\n").collect()
    }

    pub fn from_jsonl(nodes: ToolPool, edges_text: &str) -> Result<Self, SchemaError> {
        let mut edges = Vec::new();
        for (i, line) in edges_text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            edges.push(
                serde_json::from_str::<Edge>(line)
                    .map_err(|e| SchemaError::Parse(format!("edge line {}: {e}", i + 1)))?,
            );
        }
        ToolGraph::with_edges(nodes, edges)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{ParamSchema, ToolSpec};

    fn tool(name: &str, input: Option<&str>, output: &str) -> ToolSpec {
        let mut t = ToolSpec::new(name, name).result(output, ParamSchema::string());
        if let Some(i) = input {
            t = t.param(i, ParamSchema::string(), true);
        }
        t
    }

    fn edge(a: &str, o: &str, b: &str, i: &str) -> Edge {
        Edge {
            from_tool: a.into(),
            output_name: o.into(),
            to_tool: b.into(),
            input_name: i.into(),
            validation: EdgeValidation::ExactName,
        }
    }

    fn chain() -> ToolGraph {
        let pool =
            ToolPool::from_tools("t", vec![tool("a", None, "x"), tool("b", Some("x"), "y"), tool("c", Some("y"), "z")])
                .unwrap();
        ToolGraph::with_edges(pool, vec![edge("a", "x", "b", "x"), edge("b", "y", "c", "y")]).unwrap()
    }

    #[test]
    fn invariants_are_enforced() {
        let g = chain();
        let bad = [
            edge("a", "x", "a", "x"),
            edge("a", "nope", "b", "x"),
            edge("a", "x", "b", "nope"),
            edge("a", "x", "ghost", "x"),
        ];
        for e in bad {
            assert!(ToolGraph::with_edges(g.nodes.clone(), vec![e]).is_err());
        }
    }

    #[test]
    fn longest_path_counts_nodes() {
        let g = chain();
        assert_eq!(g.longest_simple_path(DEFAULT_DEPTH_CAP), 3);
        assert_eq!(g.longest_simple_path(2), 2);
        assert_eq!(ToolGraph::new(g.nodes.clone()).longest_simple_path(32), 1);
    }

    #[test]
    fn cycles_terminate() {
        let pool = ToolPool::from_tools("t", vec![tool("a", Some("y"), "x"), tool("b", Some("x"), "y")]).unwrap();
        let g = ToolGraph::with_edges(pool, vec![edge("a", "x", "b", "x"), edge("b", "y", "a", "y")]).unwrap();
        assert_eq!(g.longest_simple_path(32), 2);
    }

    #[test]
    fn jsonl_round_trip() {
        let g = chain();
        let back = ToolGraph::from_jsonl(g.nodes.clone(), &g.edges_to_jsonl()).unwrap();
        assert_eq!(back, g);
        assert_eq!(g.successors("a"), vec!["b"]);
        assert_eq!(g.predecessors("c"), vec!["b"]);
    }
}
