use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn e2e_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/e2e")
}

fn workspace() -> tempfile::TempDir {
    let tmp = tempfile::tempdir().unwrap();
    for f in ["config.json", "cassette.jsonl"] {
        fs::copy(e2e_dir().join(f), tmp.path().join(f)).unwrap();
    }
    tmp
}

fn toolweave(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_toolweave")).current_dir(dir).env("RUST_LOG", "warn").args(args).output().unwrap()
}

#[test]
fn run_all_then_export_and_analyze() {
    let tmp = workspace();
    let out = toolweave(tmp.path(), &["--config", "config.json", "run-all"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("1 domain(s) completed, 0 failed"), "{stdout}");
    let dialogues = tmp.path().join("out/dialogues.jsonl");
    assert!(dialogues.is_file());
    assert!(tmp.path().join("out/finetune.jsonl").is_file());

    let out = toolweave(tmp.path(), &["--config", "config.json", "export"]);
    assert_eq!(out.status.code(), Some(0));

    let out = toolweave(tmp.path(), &["analyze", "--input", dialogues.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("True multi-step"));
}

#[test]
fn stages_can_run_one_at_a_time() {
    let tmp = workspace();
    for stage in ["forge", "sample", "plan"] {
        let out = toolweave(tmp.path(), &["--config", "config.json", "--domain", "Customer Support", stage]);
        assert_eq!(out.status.code(), Some(0), "{stage}: {}", String::from_utf8_lossy(&out.stderr));
    }
    assert!(tmp.path().join("out/customer_support/plans.jsonl").is_file());
}

#[test]
fn stage_without_inputs_fails() {
    let tmp = workspace();
    let out = toolweave(tmp.path(), &["--config", "config.json", "synthesize"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn changed_seed_needs_force() {
    let tmp = workspace();
    assert_eq!(toolweave(tmp.path(), &["--config", "config.json", "forge"]).status.code(), Some(0));
    let out = toolweave(tmp.path(), &["--config", "config.json", "--seed", "8", "forge"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_invocations_exit_with_two() {
    let tmp = workspace();
    assert_eq!(toolweave(tmp.path(), &["forge"]).status.code(), Some(2));
    assert_eq!(
        toolweave(tmp.path(), &["--config", "config.json", "--domain", "Astrology", "forge"]).status.code(),
        Some(2)
    );
    let out = toolweave(tmp.path(), &["--config", "config.json", "harden", "--modes", "teleport"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(toolweave(tmp.path(), &["--config", "missing.json", "forge"]).status.code(), Some(2));
}
