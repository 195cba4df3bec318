use criterion::{black_box, criterion_group, criterion_main, Criterion};

use toolweave_bench::{walkthrough_pool, random_dag, random_scores};
use toolweave_core::quality::{api_metrics, MetricSettings};
use toolweave_core::sampler::mmr_select;
use toolweave_core::schema::example_args;
use toolweave_core::text::levenshtein;
use toolweave_core::validate_call_args;

fn longest_path(c: &mut Criterion) {
    let g = random_dag(7, 12, 0.35);
    c.bench_function("longest_simple_path/12", |b| b.iter(|| black_box(&g).longest_simple_path(32)));
}

fn mmr(c: &mut Criterion) {
    let scores = random_scores(3, 200);
    let sim = |i: usize, j: usize| ((i ^ j) % 17) as f64 / 17.0;
    c.bench_function("mmr_select/200x10", |b| b.iter(|| mmr_select(black_box(&scores), &sim, 10, 0.7)));
}

fn call_validation(c: &mut Criterion) {
    let pool = walkthrough_pool();
    let calls: Vec<_> = pool.tools.iter().map(|t| (t, example_args(t))).collect();
    c.bench_function("validate_call_args/walkthrough", |b| {
        b.iter(|| calls.iter().filter(|(t, a)| validate_call_args(t, a).ok).count())
    });
}

fn metrics(c: &mut Criterion) {
    let pool = walkthrough_pool();
    let g = toolweave_core::graph::ToolGraph::new(pool.clone());
    c.bench_function("api_metrics/walkthrough", |b| {
        b.iter(|| api_metrics(black_box(&pool), &g, &MetricSettings::default()))
    });
}

fn edit_distance(c: &mut Criterion) {
    c.bench_function("levenshtein/identifiers", |b| {
        b.iter(|| levenshtein(black_box("escalate_ticket_to_specialist"), black_box("escalate_case_to_supervisor")))
    });
}

criterion_group!(benches, longest_path, mmr, call_validation, metrics, edit_distance);
criterion_main!(benches);
