//! Worked examples: the customer-support walkthrough and the e-commerce
//! workflow patterns.

mod common;

use std::collections::BTreeSet;

use serde_json::Value;
use toolweave_core::engine::{call_sites, Engine, EngineSettings, TurnKind};
use toolweave_core::hardener::{mask_schema_names, unmask_schema_names};
use toolweave_core::pipeline::{export_finetune, export_gate};
use toolweave_core::planner::{resolve_param_plan, validate_plan, Marker, Planner, PlannerSettings, StepRole};
use toolweave_core::quality::{api_metrics, MetricSettings};
use toolweave_core::sampler::{find_conditional_patterns, find_fan_patterns, find_linear_paths, PatternType};
use toolweave_core::Gateway;

use common::*;

const CREATE: &str = "create_support_ticket";
const GET: &str = "get_ticket_details";
const SEARCH: &str = "search_tickets";
const ESCALATE: &str = "escalate_ticket_to_specialist";
const UPDATE: &str = "update_escalation_status";

#[test]
fn walkthrough_plan_is_valid() {
    let plan = walkthrough_plan();
    let r = validate_plan(&plan, &walkthrough_pool());
    assert!(r.ok, "{:?}", r.violations);
    assert_eq!(plan.steps.len(), 15);
    assert_eq!(plan.call_steps().count(), 5);
    assert_eq!(plan.partitions, vec![vec![CREATE, GET], vec![SEARCH], vec![ESCALATE, UPDATE]]);
}

#[test]
fn walkthrough_transcript_is_well_formed() {
    let t = walkthrough_transcript();
    t.check().unwrap();
    let turns = &t.conversations;
    let sites = call_sites(turns, false);
    assert_eq!(sites.len(), 5);
    assert!(sites.iter().all(|s| s.response.is_some()));
    assert_eq!(turns.iter().filter(|t| t.kind == TurnKind::User).count(), 5);
}

#[test]
fn planner_reproduces_the_walkthrough_roles() {
    let gw = Gateway::offline();
    let g = walkthrough_graph();
    let published = walkthrough_plan();
    let goal = published.goal.clone();
    let parts = published.partitions.clone();
    let params = resolve_param_plan(&parts, &g, &g.nodes, &goal.goal_text, false).unwrap();
    let planner = Planner::new(&gw, PlannerSettings::default());
    let plan = planner
        .weave_plan("walkthrough", &goal, published.tool_path.clone(), parts, &params, &g.nodes, 0.35, 64)
        .unwrap();
    assert!(validate_plan(&plan, &g.nodes).ok);
    let roles = |p: &toolweave_core::planner::DialoguePlan| p.steps.iter().map(|s| s.role).collect::<Vec<_>>();
    assert_eq!(roles(&plan), roles(&published));
    for (a, b) in plan.steps.iter().zip(&published.steps) {
        assert_eq!(a.tools, b.tools, "step {}", a.step_idx);
        let keys = |s: &toolweave_core::planner::PlanStep| s.params.keys().cloned().collect::<BTreeSet<_>>();
        assert_eq!(keys(a), keys(b), "step {}", a.step_idx);
    }
    // Two upstream calls produce a ticket id for the escalation; the
    // nearest one wins and the tie is recorded.
    let tie = format!("{ESCALATE}.support_case_id");
    assert!(params.ties.contains(&tie));
    assert_eq!(params.markers[&tie], Marker::output(SEARCH, "ticket_id"));
    for (k, m) in &params.markers {
        if *k != tie {
            let published_marker = published.call_steps().find_map(|s| s.params.get(k)).unwrap();
            assert_eq!(&m.to_string(), published_marker, "{k}");
        }
    }
}

#[test]
fn walkthrough_clarifies_three_values() {
    let plan = walkthrough_plan();
    let clarified: Vec<&String> = plan
        .steps
        .iter()
        .filter(|s| s.role == StepRole::AssistantClarification)
        .flat_map(|s| s.params.keys())
        .collect();
    assert_eq!(
        clarified,
        [&format!("{CREATE}.issue_description"), &format!("{ESCALATE}.specialist_notes"), &format!("{UPDATE}.status")]
    );
}

#[test]
fn walkthrough_metrics_and_chain() {
    let g = walkthrough_graph();
    let r = api_metrics(&g.nodes, &g, &MetricSettings::default());
    assert_eq!(r.apis_per_domain, 5.0);
    assert!((r.params_per_api - 3.6).abs() < 1e-12);
    assert_eq!(r.longest_chain, 5);
}

#[test]
fn export_keeps_five_call_pairs() {
    let t = walkthrough_transcript();
    let plan = walkthrough_plan();
    let pool = walkthrough_pool();
    export_gate(&t, Some(&plan), Some(&pool)).unwrap();
    let records = export_finetune(&[t], &[plan], Some(&pool));
    assert_eq!(records.len(), 1);
    let r = &records[0];
    let calls = r.conversations.iter().filter(|m| m.role == "assistant" && m.name.is_some()).count();
    let results = r.conversations.iter().filter(|m| m.role == "tool").count();
    assert_eq!((calls, results), (5, 5));
    assert_eq!(r.tools.len(), 5);
    assert_eq!(r.plan["id"], "walkthrough");
}

#[test]
fn masked_export_hides_tool_names() {
    let t = walkthrough_transcript();
    let plan = walkthrough_plan();
    let masked = mask_schema_names(&t, 11);
    let records = export_finetune(std::slice::from_ref(&masked), &[plan], Some(&walkthrough_pool()));
    assert_eq!(records.len(), 1);
    let text = serde_json::to_string(&records[0]).unwrap();
    for name in [CREATE, GET, SEARCH, ESCALATE, UPDATE] {
        assert!(!text.contains(name), "{name} leaked");
    }
    let names: BTreeSet<String> = records[0].tools.iter().map(|t| t["name"].as_str().unwrap().to_string()).collect();
    assert!(names.iter().all(|n| n.starts_with("func_") && n[5..].chars().all(|c| c.is_ascii_digit())));
    assert_eq!(unmask_schema_names(&masked).conversations, t.conversations);
}

#[test]
fn unknown_tool_call_fails_the_gate() {
    let mut t = walkthrough_transcript();
    let i = t.conversations.iter().position(|x| x.kind == TurnKind::AssistantToolCall).unwrap();
    t.conversations[i].tool_name = Some("delete_everything".into());
    t.conversations[i + 1].tool_name = Some("delete_everything".into());
    assert!(export_gate(&t, None, None).is_err());
}

#[test]
fn replayed_walkthrough_matches_plan_shape() {
    let gw = Gateway::replay(fixture("walkthrough/cassette.jsonl")).unwrap();
    let (d, _) =
        Engine::new(&gw, EngineSettings::default()).synthesize_dialogue(&walkthrough_plan(), &walkthrough_pool(), 0).unwrap();
    let called: Vec<&str> = d.tool_calls().filter_map(|t| t.tool_name.as_deref()).collect();
    assert_eq!(called, [CREATE, GET, SEARCH, ESCALATE, UPDATE]);
    assert_eq!(d.conversations.iter().filter(|t| t.kind == TurnKind::User).count(), 5);
}

#[test]
fn ecommerce_linear_chain_is_found() {
    let g = ecommerce_graph();
    let (paths, stats) = find_linear_paths(&g, 8, 5, &|_, _| 1.0);
    assert!(stats.max_retained <= 8);
    let want = ["get_order", "set_mode", "ship_local", "save_track"];
    assert!(paths.iter().any(|w| w.tool_path == want), "{:?}", paths.iter().map(|w| &w.tool_path).collect::<Vec<_>>());
    assert!(paths.iter().all(|w| w.check(&g).is_ok()));
}

#[test]
fn ecommerce_fan_pattern_is_found() {
    let g = ecommerce_graph();
    let fans = find_fan_patterns(&g, 3);
    let hit = fans.iter().any(|w| {
        let f = w.fan_branches.as_ref().unwrap();
        f.start == "get_order"
            && f.merge == "sync_status"
            && f.parallel.iter().map(String::as_str).collect::<BTreeSet<_>>()
                == BTreeSet::from(["check_stock", "calc_risk"])
    });
    assert!(hit, "{fans:?}");
    assert!(fans.iter().all(|w| w.pattern_type == PatternType::Fan && w.check(&g).is_ok()));
}

#[test]
fn ecommerce_conditional_pattern_is_found() {
    let g = ecommerce_graph();
    let conds = find_conditional_patterns(&g);
    let d = conds.iter().filter_map(|w| w.decision.as_ref()).find(|d| d.tool == "set_mode").expect("set_mode branches");
    assert_eq!(d.output_name, "shipping_mode");
    assert_eq!(d.branches.get("local").map(String::as_str), Some("ship_local"));
    assert_eq!(d.branches.get("intl").map(String::as_str), Some("ship_intl"));
    assert!(conds.iter().all(|w| w.check(&g).is_ok()));
}

#[test]
fn ecommerce_conditional_plan_runs_one_branch() {
    let g = ecommerce_graph();
    let w = find_conditional_patterns(&g)
        .into_iter()
        .find(|w| w.decision.as_ref().is_some_and(|d| d.tool == "set_mode"))
        .unwrap();
    let mut goal = goal_for(vec![]);
    goal.workflow = w;
    goal.metadata.insert("decision_value".into(), Value::String("intl".into()));
    let gw = Gateway::offline();
    let plan = Planner::new(&gw, PlannerSettings::default()).compile("cond", &goal, &g, 5).unwrap();
    assert_eq!(plan.tool_path, ["set_mode", "ship_intl"]);
    let (d, _) = Engine::new(&gw, EngineSettings::default()).synthesize_dialogue(&plan, &g.nodes, 5).unwrap();
    assert_eq!(d.tool_calls().count(), 2);
}
