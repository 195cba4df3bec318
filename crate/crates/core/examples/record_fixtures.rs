//! Re-records the replay cassettes under `fixtures/` with the offline model.
//!
//! ```text
//! cargo run -p toolweave-core --example record_fixtures
//! ```

use std::fs;
use std::path::Path;
use std::sync::Arc;

use toolweave_core::engine::{Engine, EngineSettings};
use toolweave_core::gateway::{offline, HashEmbedder, OfflineModel, HASH_MODEL_ID};
use toolweave_core::pipeline::{Pipeline, PipelineConfig, GRAPH, TOOLS};
use toolweave_core::planner::DialoguePlan;
use toolweave_core::{Gateway, GatewayMode, GatewaySettings, ToolPool};

fn recorder(cassette: &Path) -> Gateway {
    let _ = fs::remove_file(cassette);
    Gateway::new(
        GatewaySettings {
            mode: GatewayMode::Record,
            cassette: Some(cassette.to_path_buf()),
            chat_model: offline::MODEL_ID.into(),
            embed_model: HASH_MODEL_ID.into(),
            ..GatewaySettings::default()
        },
        Some(Arc::new(OfflineModel::new())),
        Some(Arc::new(HashEmbedder::default())),
    )
    .expect("cassette opens")
}

fn main() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");

    let dir = root.join("walkthrough");
    let pool = ToolPool::from_jsonl("Customer Support", &fs::read_to_string(dir.join("tools.jsonl")).unwrap()).unwrap();
    let plan: DialoguePlan = serde_json::from_str(&fs::read_to_string(dir.join("plan.json")).unwrap()).unwrap();
    let gw = recorder(&dir.join("cassette.jsonl"));
    let (d, _) = Engine::new(&gw, EngineSettings::default()).synthesize_dialogue(&plan, &pool, 0).unwrap();
    println!("walkthrough: {} turns, {} cassette entries", d.conversations.len(), gw.cassette_len());

    let dir = root.join("e2e");
    let mut cfg = PipelineConfig::load(&dir.join("config.json")).unwrap();
    let out = tempfile_dir();
    cfg.output_dir = out.clone();
    cfg.gateway.mode = GatewayMode::Record;
    let _ = fs::remove_file(dir.join("cassette.jsonl"));
    let p = Pipeline::new(cfg.clone()).unwrap();
    let summary = p.run_all(true).unwrap();
    println!("e2e: {} dialogues, {} records", summary.dialogues, summary.finetune_records);
    let domain_dir = cfg.domain_dir(&cfg.domains[0]);
    fs::create_dir_all(dir.join("golden")).unwrap();
    for f in [TOOLS, GRAPH] {
        fs::copy(domain_dir.join(f), dir.join("golden").join(f)).unwrap();
    }
    fs::remove_dir_all(out).unwrap();
}

fn tempfile_dir() -> std::path::PathBuf {
    let p = std::env::temp_dir().join(format!("toolweave-record-{}", std::process::id()));
    fs::create_dir_all(&p).unwrap();
    p
}
