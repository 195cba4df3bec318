mod common;

use std::fs;
use std::path::Path;

use toolweave_core::engine::DialogueTranscript;
use toolweave_core::pipeline::{
    read_jsonl, FinetuneRecord, Manifest, Pipeline, PipelineConfig, PipelineError, StageName, StageOutcome,
    API_METRICS, DIALOGUES, DIALOGUE_STATS, FINETUNE, GOALS, HALLUCINATIONS, JUDGE, PLANS, REPORT, TRANSCRIPTS,
};

use common::fixture;

const DOMAIN: &str = "Customer Support";

fn replay_config(dir: &Path) -> PipelineConfig {
    for f in ["config.json", "cassette.jsonl"] {
        fs::copy(fixture("e2e").join(f), dir.join(f)).unwrap();
    }
    let mut cfg = PipelineConfig::load(&dir.join("config.json")).unwrap();
    cfg.output_dir = dir.join("out");
    cfg
}

#[test]
fn relative_paths_resolve_against_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = replay_config(tmp.path());
    assert_eq!(cfg.gateway.cassette.as_deref(), Some(tmp.path().join("cassette.jsonl").as_path()));
}

#[test]
fn stages_run_once_then_skip() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = replay_config(tmp.path());
    let p = Pipeline::new(cfg.clone()).unwrap();
    for stage in StageName::ALL {
        assert_eq!(p.run_stage(stage, DOMAIN, false).unwrap(), StageOutcome::Ran, "{stage}");
    }
    for stage in StageName::ALL {
        assert_eq!(p.run_stage(stage, DOMAIN, false).unwrap(), StageOutcome::Skipped, "{stage}");
    }
    let dir = cfg.domain_dir(DOMAIN);
    for f in [API_METRICS, DIALOGUE_STATS, HALLUCINATIONS, REPORT, JUDGE] {
        assert!(dir.join(f).is_file(), "{f} missing");
    }
    let m: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("harden.manifest.json")).unwrap()).unwrap();
    assert_eq!(m.stage, StageName::Harden);
    assert_eq!(m.seed, cfg.stage_seed(StageName::Harden, DOMAIN));
    assert!(m.outputs.contains_key(DIALOGUES));
}

#[test]
fn damaged_output_is_regenerated() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = replay_config(tmp.path());
    let p = Pipeline::new(cfg.clone()).unwrap();
    for stage in [StageName::Forge, StageName::Sample, StageName::Plan] {
        p.run_stage(stage, DOMAIN, false).unwrap();
    }
    let plans = cfg.domain_dir(DOMAIN).join(PLANS);
    let before = fs::read(&plans).unwrap();
    fs::write(&plans, "").unwrap();
    assert_eq!(p.run_stage(StageName::Plan, DOMAIN, false).unwrap(), StageOutcome::Ran);
    assert_eq!(fs::read(&plans).unwrap(), before);
}

#[test]
fn planning_without_goals_names_the_missing_file() {
    let tmp = tempfile::tempdir().unwrap();
    let p = Pipeline::new(replay_config(tmp.path())).unwrap();
    p.run_stage(StageName::Forge, DOMAIN, false).unwrap();
    match p.run_stage(StageName::Plan, DOMAIN, false) {
        Err(PipelineError::MissingArtifact(path)) => assert!(path.ends_with(GOALS)),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn run_all_exports_gated_records() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = replay_config(tmp.path());
    let summary = Pipeline::new(cfg.clone()).unwrap().run_all(false).unwrap();
    assert_eq!(summary.exit_code(), 0);
    assert_eq!(summary.completed, [DOMAIN]);
    let dialogues: Vec<DialogueTranscript> = read_jsonl(&cfg.output_dir.join(DIALOGUES)).unwrap();
    let records: Vec<FinetuneRecord> = read_jsonl(&cfg.output_dir.join(FINETUNE)).unwrap();
    assert_eq!(dialogues.len(), summary.dialogues);
    assert_eq!(records.len(), summary.finetune_records);
    assert!(!records.is_empty() && records.len() <= dialogues.len());

    let transcripts: Vec<DialogueTranscript> = read_jsonl(&cfg.domain_dir(DOMAIN).join(TRANSCRIPTS)).unwrap();
    assert_eq!(transcripts.len(), cfg.quota().unwrap());
    assert!(dialogues.iter().all(|d| d.check().is_ok()));
    let masked: Vec<&DialogueTranscript> = dialogues.iter().filter(|d| d.masking.is_some()).collect();
    for d in &masked {
        assert!(d.tools.iter().all(|t| t.name.starts_with("func_")), "{}", d.id);
    }
    assert!(dialogues.iter().any(|d| d.modified));
}

#[test]
fn changed_seed_requires_force() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = replay_config(tmp.path());
    Pipeline::new(cfg.clone()).unwrap().run_stage(StageName::Forge, DOMAIN, false).unwrap();
    let mut other = cfg;
    other.master_seed += 1;
    let p = Pipeline::new(other).unwrap();
    assert!(matches!(p.run_stage(StageName::Forge, DOMAIN, false), Err(PipelineError::ManifestMismatch { .. })));
}
