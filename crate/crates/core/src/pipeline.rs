//! Configuration, per-domain stage orchestration with manifests, and export.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use indexmap::IndexMap;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::engine::{call_sites, DialogueTranscript, Engine, EngineError, EngineSettings, TurnKind};
use crate::forge::{Forge, ForgeError, ForgeSettings, SynthesisPlan};
use crate::gateway::{
    offline, ChatProvider, EmbeddingProvider, Gateway, GatewayError, GatewayMode, GatewaySettings, HashEmbedder,
    HttpConfig, HttpProvider, OfflineModel, RetryPolicy, ENV_API_KEY, HASH_MODEL_ID,
};
use crate::graph::ToolGraph;
use crate::hardener::{mask_schema_names, mask_text, tools_available_at, Hardener, InjectionConfig};
use crate::knowledge::{
    build_domain_context, bundled_context, load_fixture_context, ContextBudget, DomainContext, KnowledgeError,
    ReplaySource, SourceRecording, WikiSource,
};
use crate::planner::{validate_plan, DialoguePlan, PlanError, Planner, PlannerSettings};
use crate::quality::{self, MetricSettings};
use crate::sampler::{GoalRecord, Sampler, SamplerError, SamplerSettings};
use crate::schema::{validate_call_args, SchemaError, ToolPool};
use crate::text::snake_case;
use crate::util::{derive_seed, par_map};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("missing upstream artifact {0}")]
    MissingArtifact(PathBuf),
    #[error("{stage} for {domain}: {detail}; rerun with --force to overwrite")]
    ManifestMismatch { stage: StageName, domain: String, detail: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no domains configured")]
    NoDomains,
    #[error("{path}: bad record: {message}")]
    Record { path: PathBuf, message: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Forge(#[from] ForgeError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("{stage} for {domain} produced nothing: {detail}")]
    Empty { stage: StageName, domain: String, detail: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |e| PipelineError::Io { path: path.to_path_buf(), message: e.to_string() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageName {
    Forge,
    Sample,
    Plan,
    Synthesize,
    Harden,
    Analyze,
}

impl StageName {
    pub const ALL: [StageName; 6] = [
        StageName::Forge,
        StageName::Sample,
        StageName::Plan,
        StageName::Synthesize,
        StageName::Harden,
        StageName::Analyze,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StageName::Forge => "forge",
            StageName::Sample => "sample",
            StageName::Plan => "plan",
            StageName::Synthesize => "synthesize",
            StageName::Harden => "harden",
            StageName::Analyze => "analyze",
        }
    }

    /// Files read from the domain directory.
    pub fn inputs(self) -> &'static [&'static str] {
        match self {
            StageName::Forge => &[],
            StageName::Sample => &[TOOLS, GRAPH],
            StageName::Plan => &[TOOLS, GRAPH, GOALS],
            StageName::Synthesize => &[TOOLS, PLANS],
            StageName::Harden => &[TOOLS, TRANSCRIPTS],
            StageName::Analyze => &[TOOLS, GRAPH, PLANS, DIALOGUES],
        }
    }

    /// Files written to the domain directory.
    pub fn outputs(self) -> &'static [&'static str] {
        match self {
            StageName::Forge => &[CONTEXT, TOOLS, GRAPH, REJECTIONS],
            StageName::Sample => &[GOALS],
            StageName::Plan => &[PLANS],
            StageName::Synthesize => &[TRANSCRIPTS],
            StageName::Harden => &[DIALOGUES],
            StageName::Analyze => &[API_METRICS, DIALOGUE_STATS, HALLUCINATIONS, REPORT],
        }
    }
}

impl fmt::Display for StageName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for StageName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StageName::ALL.into_iter().find(|n| n.as_str() == s).ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

pub const CONTEXT: &str = "context.json";
pub const TOOLS: &str = "tools.jsonl";
pub const GRAPH: &str = "graph.jsonl";
pub const REJECTIONS: &str = "rejections.jsonl";
pub const GOALS: &str = "goals.jsonl";
pub const PLANS: &str = "plans.jsonl";
pub const TRANSCRIPTS: &str = "transcripts.jsonl";
pub const DIALOGUES: &str = "dialogues.jsonl";
pub const FINETUNE: &str = "finetune.jsonl";
pub const API_METRICS: &str = "api_metrics.json";
pub const DIALOGUE_STATS: &str = "dialogue_stats.json";
pub const HALLUCINATIONS: &str = "hallucinations.jsonl";
pub const JUDGE: &str = "judge.jsonl";
pub const REPORT: &str = "report.md";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    pub mode: GatewayMode,
    pub cassette: Option<PathBuf>,
    pub chat_model: String,
    pub embed_model: String,
    /// Chat-completions base URL; the environment supplies it when unset.
    pub base_url: Option<String>,
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
    pub timeout_secs: u64,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            mode: GatewayMode::Live,
            cassette: None,
            chat_model: offline::MODEL_ID.into(),
            embed_model: HASH_MODEL_ID.into(),
            base_url: None,
            max_in_flight: 8,
            retry: RetryPolicy::default(),
            timeout_secs: 120,
        }
    }
}

impl GatewayConfig {
    fn http(&self) -> Result<HttpConfig, GatewayError> {
        let mut cfg = match &self.base_url {
            Some(url) => HttpConfig {
                base_url: url.clone(),
                api_key: std::env::var(ENV_API_KEY).ok(),
                chat_model: String::new(),
                embed_model: String::new(),
                timeout: Duration::from_secs(self.timeout_secs),
            },
            None if self.mode == GatewayMode::Replay => HttpConfig {
                base_url: "http://replay.invalid".into(),
                api_key: None,
                chat_model: String::new(),
                embed_model: String::new(),
                timeout: Duration::from_secs(self.timeout_secs),
            },
            None => HttpConfig::from_env()?,
        };
        cfg.chat_model = self.chat_model.clone();
        cfg.embed_model = self.embed_model.clone();
        cfg.timeout = Duration::from_secs(self.timeout_secs);
        Ok(cfg)
    }

    pub fn build(&self) -> Result<Gateway, GatewayError> {
        let chat: Option<Arc<dyn ChatProvider>> = match self.mode {
            GatewayMode::Replay => None,
            _ if self.chat_model == offline::MODEL_ID => Some(Arc::new(OfflineModel::new())),
            _ => Some(Arc::new(HttpProvider::new(self.http()?))),
        };
        let embedder: Arc<dyn EmbeddingProvider> = if self.embed_model == HASH_MODEL_ID {
            Arc::new(HashEmbedder::default())
        } else {
            Arc::new(HttpProvider::new(self.http()?))
        };
        let settings = GatewaySettings {
            mode: self.mode,
            cassette: self.cassette.clone(),
            chat_model: self.chat_model.clone(),
            embed_model: self.embed_model.clone(),
            max_in_flight: self.max_in_flight,
            retry: self.retry,
        };
        Gateway::new(settings, chat, Some(embedder))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KnowledgeConfig {
    /// Directory of `<domain_slug>.json` context documents.
    pub contexts_dir: Option<PathBuf>,
    /// Recorded knowledge-source answers.
    pub recording: Option<PathBuf>,
    /// Query the public knowledge services when nothing else covers a domain.
    pub live: bool,
    pub budget: ContextBudget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HardenSettings {
    pub injection: InjectionConfig,
    pub paraphrase: bool,
    /// Share of output dialogues whose tool names are masked.
    pub mask_share: f64,
}

impl Default for HardenSettings {
    fn default() -> Self {
        HardenSettings { injection: InjectionConfig::default(), paraphrase: false, mask_share: 0.0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalyzeSettings {
    pub metrics: MetricSettings,
    /// Dialogues per domain sent to the judge; zero disables judging.
    pub judge_sample: usize,
    pub assist_hallucination: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub domains: Vec<String>,
    pub output_dir: PathBuf,
    /// Step list for tool synthesis; the built-in plan when unset.
    pub synthesis_plan: Option<PathBuf>,
    pub master_seed: u64,
    /// Per-stage master seeds overriding `master_seed`.
    pub seeds: IndexMap<String, u64>,
    /// Total dialogues across domains; each domain gets ceil(total / domains).
    pub total_dialogues: Option<usize>,
    pub parallelism: usize,
    pub workers: usize,
    pub gateway: GatewayConfig,
    pub knowledge: KnowledgeConfig,
    pub forge: ForgeSettings,
    pub sampler: SamplerSettings,
    pub planner: PlannerSettings,
    pub engine: EngineSettings,
    pub harden: HardenSettings,
    pub analyze: AnalyzeSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            domains: Vec::new(),
            output_dir: PathBuf::from("out"),
            synthesis_plan: None,
            master_seed: 0,
            seeds: IndexMap::new(),
            total_dialogues: None,
            parallelism: 2,
            workers: 4,
            gateway: GatewayConfig::default(),
            knowledge: KnowledgeConfig::default(),
            forge: ForgeSettings::default(),
            sampler: SamplerSettings::default(),
            planner: PlannerSettings::default(),
            engine: EngineSettings::default(),
            harden: HardenSettings::default(),
            analyze: AnalyzeSettings::default(),
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    /// Reads a JSON config; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        resolve(base, &mut cfg.output_dir);
        for p in [
            cfg.synthesis_plan.as_mut(),
            cfg.gateway.cassette.as_mut(),
            cfg.knowledge.contexts_dir.as_mut(),
            cfg.knowledge.recording.as_mut(),
        ]
        .into_iter()
        .flatten()
        {
            resolve(base, p);
        }
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        for (name, p) in [
            ("planner.p_clar", self.planner.p_clar),
            ("harden.mask_share", self.harden.mask_share),
            ("sampler.mmr_lambda", self.sampler.mmr_lambda),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} is outside [0, 1]"));
            }
        }
        self.harden.injection.check().map_err(PipelineError::Config)?;
        for k in self.seeds.keys() {
            if k.parse::<StageName>().is_err() {
                return bad(format!("seeds: unknown stage {k:?}"));
            }
        }
        if self.gateway.mode != GatewayMode::Live && self.gateway.cassette.is_none() {
            return bad(format!("gateway mode {} needs a cassette", self.gateway.mode));
        }
        Ok(())
    }

    pub fn stage_seed(&self, stage: StageName, domain: &str) -> u64 {
        let master = self.seeds.get(stage.as_str()).copied().unwrap_or(self.master_seed);
        derive_seed(master, &[stage.as_str(), domain])
    }

    pub fn domain_dir(&self, domain: &str) -> PathBuf {
        self.output_dir.join(snake_case(domain))
    }

    /// Dialogue quota per domain, when a total is configured.
    pub fn quota(&self) -> Option<usize> {
        let n = self.domains.len().max(1);
        self.total_dialogues.map(|t| t.div_ceil(n))
    }

    /// Settings that determine a stage's outputs.
    fn snapshot(&self, stage: StageName) -> Value {
        let models = json!({"chat": self.gateway.chat_model, "embed": self.gateway.embed_model});
        let v = match stage {
            StageName::Forge => json!({
                "forge": self.forge,
                "synthesis_plan": self.synthesis_plan,
                "knowledge": self.knowledge,
            }),
            StageName::Sample => json!({"sampler": self.sampler}),
            StageName::Plan => json!({"planner": self.planner, "quota": self.quota()}),
            StageName::Synthesize => json!({"engine": self.engine}),
            StageName::Harden => json!({"harden": self.harden}),
            StageName::Analyze => json!({"analyze": self.analyze}),
        };
        json!({"models": models, "settings": v})
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: StageName,
    pub domain: String,
    pub seed: u64,
    pub config_hash: String,
    pub inputs: IndexMap<String, String>,
    pub outputs: IndexMap<String, String>,
    pub config: Value,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub notes: Value,
    pub created_at: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn file_hash(path: &Path) -> Result<String, PipelineError> {
    Ok(sha256_hex(&fs::read(path).map_err(io_err(path))?))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), PipelineError> {
    let mut text = String::new();
    for it in items {
        text.push_str(&serde_json::to_string(it).expect("records serialize"));
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| PipelineError::Record {
                path: path.to_path_buf(),
                message: format!("line {}: {e}", i + 1),
            })
        })
        .collect()
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(v).expect("documents serialize");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageOutcome {
    Ran,
    Skipped,
}

/// One conversation message in a training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneMessage {
    pub role: String,
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneRecord {
    pub id: String,
    pub domain: String,
    pub modified: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub injection_mode: Option<String>,
    pub tools: Vec<Value>,
    pub conversations: Vec<FinetuneMessage>,
    pub plan: Value,
}

/// Whether the dialogue may be exported: well-formed alternation, a valid
/// plan when one is known, and every original call valid for the tools
/// visible at that point.
pub fn export_gate(d: &DialogueTranscript, plan: Option<&DialoguePlan>, pool: Option<&ToolPool>) -> Result<(), String> {
    d.check()?;
    if let (Some(plan), Some(pool)) = (plan, pool) {
        let r = validate_plan(plan, pool);
        if !r.ok {
            return Err(format!("plan {} fails validation: {:?}", plan.id, r.kinds()));
        }
    }
    for site in call_sites(&d.conversations, false) {
        let tools = tools_available_at(d, site.call);
        let name = site.tool(&d.conversations);
        let spec = tools.iter().find(|t| t.name == name).ok_or_else(|| format!("call to undeclared {name}"))?;
        let r = validate_call_args(spec, site.args(&d.conversations).expect("calls carry args"));
        if !r.ok {
            return Err(format!("call to {name} is invalid: {:?}", r.kinds()));
        }
    }
    Ok(())
}

/// One record per dialogue passing the gate; others are logged and skipped.
pub fn export_finetune(
    dialogues: &[DialogueTranscript],
    plans: &[DialoguePlan],
    pool: Option<&ToolPool>,
) -> Vec<FinetuneRecord> {
    let mut out = Vec::new();
    for d in dialogues {
        let plan = plans.iter().find(|p| p.id == d.plan_ref);
        if let Err(e) = export_gate(d, plan, pool) {
            log::warn!("skipping {}: {e}", d.id);
            continue;
        }
        let conversations = d
            .conversations
            .iter()
            .map(|t| FinetuneMessage {
                role: t.role.clone(),
                content: t.content.clone(),
                name: match t.kind {
                    TurnKind::AssistantToolCall | TurnKind::ToolResponse => t.tool_name.clone(),
                    _ => None,
                },
            })
            .collect();
        let mut plan_value = plan.map_or(Value::Null, |p| serde_json::to_value(p).expect("plans serialize"));
        if let (Some(map), false) = (&d.masking, plan_value.is_null()) {
            let text = mask_text(&plan_value.to_string(), map);
            plan_value = serde_json::from_str(&text).expect("masking keeps JSON valid");
        }
        out.push(FinetuneRecord {
            id: d.id.clone(),
            domain: d.domain.clone(),
            modified: d.modified,
            injection_mode: d.injection_mode.clone(),
            tools: d.tools.iter().map(|t| t.to_value()).collect(),
            conversations,
            plan: plan_value,
        });
    }
    out
}

#[derive(Debug, Default)]
pub struct RunSummary {
    pub completed: Vec<String>,
    pub failed: Vec<(String, PipelineError)>,
    pub dialogues: usize,
    pub finetune_records: usize,
}

impl RunSummary {
    /// 0 when every domain completed, 1 when some did, 2 when none did.
    pub fn exit_code(&self) -> i32 {
        match (self.completed.is_empty(), self.failed.is_empty()) {
            (_, true) => 0,
            (false, false) => 1,
            (true, false) => 2,
        }
    }
}

pub struct Pipeline {
    pub cfg: PipelineConfig,
    gateway: Gateway,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig) -> Result<Self, PipelineError> {
        cfg.check()?;
        let gateway = cfg.gateway.build()?;
        Ok(Pipeline { cfg, gateway })
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    fn manifest_path(&self, stage: StageName, domain: &str) -> PathBuf {
        self.cfg.domain_dir(domain).join(format!("{stage}.manifest.json"))
    }

    /// Runs one stage for one domain unless its manifest shows identical
    /// inputs, seed and settings with intact outputs.
    pub fn run_stage(&self, stage: StageName, domain: &str, force: bool) -> Result<StageOutcome, PipelineError> {
        let dir = self.cfg.domain_dir(domain);
        let mut inputs = IndexMap::new();
        for f in stage.inputs() {
            let p = dir.join(f);
            if !p.exists() {
                return Err(PipelineError::MissingArtifact(p));
            }
            inputs.insert(f.to_string(), file_hash(&p)?);
        }
        let seed = self.cfg.stage_seed(stage, domain);
        let config = self.cfg.snapshot(stage);
        let config_hash = sha256_hex(config.to_string().as_bytes());
        let mpath = self.manifest_path(stage, domain);
        if mpath.exists() && !force {
            let old: Manifest = serde_json::from_str(&fs::read_to_string(&mpath).map_err(io_err(&mpath))?)
                .map_err(|e| PipelineError::Record { path: mpath.clone(), message: e.to_string() })?;
            let mut detail = None;
            if old.config_hash != config_hash {
                detail = Some("settings differ from the manifest".to_string());
            } else if old.seed != seed {
                detail = Some("seed differs from the manifest".to_string());
            } else if old.inputs != inputs {
                detail = Some("upstream artifacts changed since the manifest".to_string());
            }
            if let Some(detail) = detail {
                return Err(PipelineError::ManifestMismatch { stage, domain: domain.to_string(), detail });
            }
            let intact = old.outputs.iter().all(|(f, h)| file_hash(&dir.join(f)).is_ok_and(|x| &x == h));
            if intact {
                log::info!("{domain}: {stage} is up to date");
                return Ok(StageOutcome::Skipped);
            }
        }
        log::info!("{domain}: running {stage}");
        let notes = match stage {
            StageName::Forge => self.forge(domain, &dir)?,
            StageName::Sample => self.sample(domain, &dir)?,
            StageName::Plan => self.plan(domain, &dir, seed)?,
            StageName::Synthesize => self.synthesize(domain, &dir, seed)?,
            StageName::Harden => self.harden(domain, &dir, seed)?,
            StageName::Analyze => self.analyze(domain, &dir)?,
        };
        let mut outputs = IndexMap::new();
        for f in stage.outputs() {
            outputs.insert(f.to_string(), file_hash(&dir.join(f))?);
        }
        if stage == StageName::Analyze && dir.join(JUDGE).exists() && self.cfg.analyze.judge_sample > 0 {
            outputs.insert(JUDGE.to_string(), file_hash(&dir.join(JUDGE))?);
        }
        let m = Manifest {
            stage,
            domain: domain.to_string(),
            seed,
            config_hash,
            inputs,
            outputs,
            config,
            notes,
            created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        };
        write_json(&mpath, &m)?;
        Ok(StageOutcome::Ran)
    }

    fn context(&self, domain: &str) -> Result<DomainContext, PipelineError> {
        let k = &self.cfg.knowledge;
        if let Some(dir) = &k.contexts_dir {
            let p = dir.join(format!("{}.json", snake_case(domain)));
            if p.exists() {
                return Ok(load_fixture_context(&p)?);
            }
        }
        if let Some(rec) = &k.recording {
            let source = ReplaySource(SourceRecording::load(rec)?);
            if let Ok(ctx) = build_domain_context(domain, &source, k.budget) {
                return Ok(ctx);
            }
        }
        if let Some(ctx) = bundled_context(domain) {
            return Ok(ctx);
        }
        if k.live {
            return Ok(build_domain_context(domain, &WikiSource::default(), k.budget)?);
        }
        Err(PipelineError::Config(format!("no knowledge context available for {domain:?}")))
    }

    fn load_pool(&self, domain: &str, dir: &Path) -> Result<ToolPool, PipelineError> {
        let p = dir.join(TOOLS);
        let text = fs::read_to_string(&p).map_err(io_err(&p))?;
        Ok(ToolPool::from_jsonl(domain, &text)?)
    }

    fn load_graph(&self, domain: &str, dir: &Path) -> Result<ToolGraph, PipelineError> {
        let pool = self.load_pool(domain, dir)?;
        let p = dir.join(GRAPH);
        let text = fs::read_to_string(&p).map_err(io_err(&p))?;
        Ok(ToolGraph::from_jsonl(pool, &text)?)
    }

    fn forge(&self, domain: &str, dir: &Path) -> Result<Value, PipelineError> {
        let ctx = self.context(domain)?;
        let plan = match &self.cfg.synthesis_plan {
            Some(p) => SynthesisPlan::from_json(&fs::read_to_string(p).map_err(io_err(p))?)?,
            None => SynthesisPlan::standard(),
        };
        let forge = Forge::new(&self.gateway, self.cfg.forge.clone());
        let (pool, mut log) = forge.run_synthesis_plan(&ctx, &plan)?;
        let (graph, edge_log) = forge.construct_tool_graph(&pool)?;
        log.extend(edge_log);
        write_atomic(&dir.join(CONTEXT), format!("{}\n", ctx.to_json()).as_bytes())?;
        write_atomic(&dir.join(TOOLS), pool.to_jsonl().as_bytes())?;
        write_atomic(&dir.join(GRAPH), graph.edges_to_jsonl().as_bytes())?;
        write_atomic(&dir.join(REJECTIONS), log.to_jsonl().as_bytes())?;
        Ok(json!({"tools": pool.len(), "edges": graph.edges.len(), "rejections": log.len()}))
    }

    fn sample(&self, domain: &str, dir: &Path) -> Result<Value, PipelineError> {
        let graph = self.load_graph(domain, dir)?;
        let sampler = Sampler::new(&self.gateway, self.cfg.sampler.clone())?;
        let (goals, stats) = sampler.sample(&graph)?;
        if goals.is_empty() {
            return Err(PipelineError::Empty {
                stage: StageName::Sample,
                domain: domain.into(),
                detail: "no workflow yielded a usable goal".into(),
            });
        }
        write_jsonl(&dir.join(GOALS), &goals)?;
        Ok(
            json!({"goals": goals.len(), "beam_max_retained": stats.max_retained, "longest_emitted": stats.longest_emitted}),
        )
    }

    fn plan(&self, domain: &str, dir: &Path, seed: u64) -> Result<Value, PipelineError> {
        let graph = self.load_graph(domain, dir)?;
        let goals: Vec<GoalRecord> = read_jsonl(&dir.join(GOALS))?;
        if goals.is_empty() {
            return Err(PipelineError::Empty {
                stage: StageName::Plan,
                domain: domain.into(),
                detail: format!("{GOALS} is empty"),
            });
        }
        let count = self.cfg.quota().unwrap_or(goals.len());
        let planner = Planner::new(&self.gateway, self.cfg.planner.clone());
        let slug = snake_case(domain);
        let idx: Vec<usize> = (0..count).collect();
        let results = par_map(&idx, self.cfg.workers, |_, &i| {
            let id = format!("{slug}-p{i:04}");
            planner
                .compile(&id, &goals[i % goals.len()], &graph, derive_seed(seed, &[&i.to_string()]))
                .map_err(|e| (id, e))
        });
        let mut plans = Vec::new();
        let mut failed = 0;
        for r in results {
            match r {
                Ok(p) => plans.push(p),
                Err((id, PlanError::Gateway(e))) if !is_content_error(&e) => {
                    return Err(PipelineError::Gateway(e)).inspect_err(|_| log::error!("{id}: gateway failure"))
                }
                Err((id, e)) => {
                    failed += 1;
                    log::warn!("{id}: {e}");
                }
            }
        }
        write_jsonl(&dir.join(PLANS), &plans)?;
        Ok(json!({"plans": plans.len(), "failed": failed}))
    }

    fn synthesize(&self, domain: &str, dir: &Path, seed: u64) -> Result<Value, PipelineError> {
        let pool = self.load_pool(domain, dir)?;
        let plans: Vec<DialoguePlan> = read_jsonl(&dir.join(PLANS))?;
        let engine = Engine::new(&self.gateway, self.cfg.engine.clone());
        let results = par_map(&plans, self.cfg.workers, |_, p| {
            engine.synthesize_dialogue(p, &pool, derive_seed(seed, &[&p.id])).map(|(t, _)| t)
        });
        let mut out = Vec::new();
        let mut failed = 0;
        for (p, r) in plans.iter().zip(results) {
            match r {
                Ok(t) => out.push(t),
                Err(EngineError::Gateway(e)) if !is_content_error(&e) => return Err(e.into()),
                Err(e) => {
                    failed += 1;
                    log::warn!("{}: {e}", p.id);
                }
            }
        }
        write_jsonl(&dir.join(TRANSCRIPTS), &out)?;
        Ok(json!({"dialogues": out.len(), "failed": failed}))
    }

    fn harden(&self, domain: &str, dir: &Path, seed: u64) -> Result<Value, PipelineError> {
        use rand::{Rng, SeedableRng};
        let pool = self.load_pool(domain, dir)?;
        let transcripts: Vec<DialogueTranscript> = read_jsonl(&dir.join(TRANSCRIPTS))?;
        let h = &self.cfg.harden;
        let hardener = Hardener::new(&self.gateway);
        let inj = InjectionConfig { seed: derive_seed(seed, &["inject"]), ..h.injection.clone() };
        let mut out = hardener.inject_errors(&transcripts, &pool, &inj)?;
        if h.paraphrase {
            let para = derive_seed(seed, &["paraphrase"]);
            let rewritten =
                par_map(&out, self.cfg.workers, |_, d| hardener.paraphrase_user_turns(d, derive_seed(para, &[&d.id])));
            out = rewritten.into_iter().collect::<Result<_, _>>()?;
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(seed, &["mask"]));
        let mut masked = 0;
        for d in &mut out {
            if h.mask_share > 0.0 && rng.gen::<f64>() < h.mask_share {
                *d = mask_schema_names(d, derive_seed(seed, &["mask", &d.id]));
                masked += 1;
            }
        }
        let variants = out.iter().filter(|d| d.modified).count();
        write_jsonl(&dir.join(DIALOGUES), &out)?;
        Ok(json!({"dialogues": out.len(), "variants": variants, "masked": masked}))
    }

    fn analyze(&self, domain: &str, dir: &Path) -> Result<Value, PipelineError> {
        let graph = self.load_graph(domain, dir)?;
        let plans: Vec<DialoguePlan> = read_jsonl(&dir.join(PLANS))?;
        let dialogues: Vec<DialogueTranscript> = read_jsonl(&dir.join(DIALOGUES))?;
        let a = &self.cfg.analyze;
        let metrics = quality::api_metrics(&graph.nodes, &graph, &a.metrics);
        let stats = quality::dialogue_stats(&dialogues, Some(&plans));
        let assist = a.assist_hallucination.then_some(&self.gateway);
        let halluc =
            dialogues.iter().map(|d| quality::detect_hallucinations(d, assist)).collect::<Result<Vec<_>, _>>()?;
        let hsum = quality::summarize_hallucinations(&halluc);
        write_json(&dir.join(API_METRICS), &metrics)?;
        write_json(&dir.join(DIALOGUE_STATS), &stats)?;
        write_jsonl(&dir.join(HALLUCINATIONS), &halluc)?;
        let mut report = format!(
            "# {domain}\n\n## API metrics\n\n{metrics}\n## Dialogue structure\n\n{stats}\n## Hallucinations\n\n{hsum}"
        );
        let mut notes = json!({"dialogues": dialogues.len(), "clean": hsum.clean});
        if a.judge_sample > 0 {
            let sample: Vec<&DialogueTranscript> =
                dialogues.iter().filter(|d| !d.modified).take(a.judge_sample).collect();
            let scored = par_map(&sample, self.cfg.workers, |_, d| quality::judge_dialogue(&self.gateway, d));
            let mut scores = Vec::new();
            let mut failed = 0;
            for (d, s) in sample.iter().zip(scored) {
                match s {
                    Ok(s) => scores.push(json!({"id": d.id, "scores": s})),
                    Err(e) => {
                        failed += 1;
                        log::warn!("judge failed on {}: {e}", d.id);
                    }
                }
            }
            let parsed: Vec<quality::JudgeScores> = scores
                .iter()
                .map(|v| serde_json::from_value(v["scores"].clone()).expect("scores round-trip"))
                .collect();
            let jsum = quality::summarize_judgements(&parsed, failed);
            write_jsonl(&dir.join(JUDGE), &scores)?;
            report.push_str(&format!("\n## Judge\n\n{jsum}"));
            notes["judged"] = json!(jsum.judged);
        }
        write_atomic(&dir.join(REPORT), report.as_bytes())?;
        Ok(notes)
    }

    /// Every stage for one domain, in order.
    pub fn run_domain(&self, domain: &str, force: bool) -> Result<(), PipelineError> {
        for stage in StageName::ALL {
            self.run_stage(stage, domain, force)?;
        }
        Ok(())
    }

    /// Domains run concurrently and fail independently; the union of
    /// completed domains is exported at the top of the output directory.
    pub fn run_all(&self, force: bool) -> Result<RunSummary, PipelineError> {
        if self.cfg.domains.is_empty() {
            return Err(PipelineError::NoDomains);
        }
        let results = par_map(&self.cfg.domains, self.cfg.parallelism, |_, d| self.run_domain(d, force));
        let mut summary = RunSummary::default();
        for (d, r) in self.cfg.domains.iter().zip(results) {
            match r {
                Ok(()) => summary.completed.push(d.clone()),
                Err(e) => {
                    log::error!("{d}: {e}");
                    summary.failed.push((d.clone(), e));
                }
            }
        }
        let (n, f) = self.export(&summary.completed)?;
        summary.dialogues = n;
        summary.finetune_records = f;
        Ok(summary)
    }

    /// Writes the union `dialogues.jsonl` and `finetune.jsonl` for `domains`.
    pub fn export(&self, domains: &[String]) -> Result<(usize, usize), PipelineError> {
        let mut all = Vec::new();
        let mut records = Vec::new();
        for domain in domains {
            let dir = self.cfg.domain_dir(domain);
            let dialogues: Vec<DialogueTranscript> = read_jsonl(&dir.join(DIALOGUES))?;
            let plans: Vec<DialoguePlan> = read_jsonl(&dir.join(PLANS))?;
            let pool = self.load_pool(domain, &dir)?;
            records.extend(export_finetune(&dialogues, &plans, Some(&pool)));
            all.extend(dialogues);
        }
        write_jsonl(&self.cfg.output_dir.join(DIALOGUES), &all)?;
        write_jsonl(&self.cfg.output_dir.join(FINETUNE), &records)?;
        Ok((all.len(), records.len()))
    }
}

fn is_content_error(e: &GatewayError) -> bool {
    matches!(e, GatewayError::NoDocument | GatewayError::ShapeMismatch { .. } | GatewayError::Truncated { .. })
}

/// Structure statistics and deterministic hallucination checks for any
/// dialogues file.
pub fn analyze_file(
    path: &Path,
) -> Result<(quality::DialogueStatsReport, quality::HallucinationSummary), PipelineError> {
    let dialogues: Vec<DialogueTranscript> = read_jsonl(path)?;
    let stats = quality::dialogue_stats(&dialogues, None);
    let reports = dialogues.iter().map(|d| quality::detect_hallucinations(d, None)).collect::<Result<Vec<_>, _>>()?;
    Ok((stats, quality::summarize_hallucinations(&reports)))
}
