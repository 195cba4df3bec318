use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use toolweave_core::hardener::InjectionMode;
use toolweave_core::pipeline::{analyze_file, Pipeline, PipelineConfig, PipelineError, StageName};

#[derive(Parser)]
#[command(name = "toolweave", version, about = "Synthesize multi-turn tool-calling dialogues")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Pipeline configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Restrict to one configured domain; repeatable.
    #[arg(long, global = true)]
    domain: Vec<String>,
    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Re-run stages whose manifests disagree with the current settings.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Build the tool pool and dependency graph.
    Forge,
    /// Sample workflows and goals from the graph.
    Sample,
    /// Compile goals into dialogue plans.
    Plan,
    /// Realize plans as dialogue transcripts.
    Synthesize,
    /// Add failure variants, paraphrases and masking.
    Harden(HardenArgs),
    /// Compute corpus metrics and reports.
    Analyze {
        /// Analyze this dialogues file instead of the configured domains.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Run every stage for every domain and export the dataset.
    RunAll,
    /// Write the union dialogues and fine-tuning records.
    Export,
}

#[derive(Args)]
struct HardenArgs {
    /// Probability that a dialogue receives an injected failure.
    #[arg(long)]
    p_inject: Option<f64>,
    /// Share of injections drawn from the multi-call modes.
    #[arg(long)]
    complex_share: Option<f64>,
    /// Comma-separated injection modes to enable.
    #[arg(long, value_delimiter = ',')]
    modes: Vec<String>,
    /// Share of dialogues whose tool names are masked.
    #[arg(long)]
    mask: Option<f64>,
    /// Add paraphrased copies of each dialogue.
    #[arg(long)]
    paraphrase: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(2)
        }
    }
}

fn load(global: &Global) -> Result<PipelineConfig, String> {
    let path = global.config.as_ref().ok_or("--config is required")?;
    let mut cfg = PipelineConfig::load(path).map_err(|e| e.to_string())?;
    if let Some(seed) = global.seed {
        cfg.master_seed = seed;
    }
    if !global.domain.is_empty() {
        if let Some(d) = global.domain.iter().find(|d| !cfg.domains.contains(d)) {
            return Err(format!("domain {d:?} is not configured"));
        }
        cfg.domains.retain(|d| global.domain.contains(d));
    }
    Ok(cfg)
}

fn apply_harden(cfg: &mut PipelineConfig, a: &HardenArgs) -> Result<(), String> {
    let h = &mut cfg.harden;
    if let Some(p) = a.p_inject {
        h.injection.p_inject = p;
    }
    if let Some(s) = a.complex_share {
        h.injection.complex_share = s;
    }
    if !a.modes.is_empty() {
        h.injection.enabled_modes = a
            .modes
            .iter()
            .map(|m| InjectionMode::parse(m).ok_or(format!("unknown injection mode {m:?}")))
            .collect::<Result<_, _>>()?;
    }
    if let Some(m) = a.mask {
        h.mask_share = m;
    }
    h.paraphrase |= a.paraphrase;
    cfg.check().map_err(|e| e.to_string())
}

/// Exit status for a batch of per-domain outcomes.
fn status(failures: usize, total: usize) -> u8 {
    match failures {
        0 => 0,
        f if f < total => 1,
        _ => 2,
    }
}

fn run_stage(p: &Pipeline, stage: StageName, force: bool) -> u8 {
    let mut failures = 0;
    for d in &p.cfg.domains {
        match p.run_stage(stage, d, force) {
            Ok(outcome) => log::info!("{d}: {stage} {outcome:?}"),
            Err(e) => {
                failures += 1;
                log::error!("{d}: {e}");
            }
        }
    }
    status(failures, p.cfg.domains.len())
}

fn run(cli: Cli) -> Result<u8, String> {
    let g = &cli.global;
    if let Command::Analyze { input: Some(path) } = &cli.command {
        let (stats, halluc) = analyze_file(path).map_err(|e| e.to_string())?;
        println!("{stats}\n{halluc}");
        return Ok(0);
    }
    let mut cfg = load(g)?;
    if let Command::Harden(a) = &cli.command {
        apply_harden(&mut cfg, a)?;
    }
    if cfg.domains.is_empty() {
        return Err(PipelineError::NoDomains.to_string());
    }
    let p = Pipeline::new(cfg).map_err(|e| e.to_string())?;
    let stage = match cli.command {
        Command::Forge => StageName::Forge,
        Command::Sample => StageName::Sample,
        Command::Plan => StageName::Plan,
        Command::Synthesize => StageName::Synthesize,
        Command::Harden(_) => StageName::Harden,
        Command::Analyze { .. } => StageName::Analyze,
        Command::RunAll => {
            let s = p.run_all(g.force).map_err(|e| e.to_string())?;
            println!(
                "{} domain(s) completed, {} failed; {} dialogues, {} fine-tuning records",
                s.completed.len(),
                s.failed.len(),
                s.dialogues,
                s.finetune_records
            );
            return Ok(s.exit_code() as u8);
        }
        Command::Export => {
            let (n, f) = p.export(&p.cfg.domains).map_err(|e| e.to_string())?;
            println!("{n} dialogues, {f} fine-tuning records");
            return Ok(0);
        }
    };
    Ok(run_stage(&p, stage, g.force))
}
