//! `tempnorm` command-line driver.
//!
//! Reads a TOML experiment config, applies flag overrides and dispatches to
//! the library. Exit codes: 0 success, 1 other failure, 2 configuration
//! error, 3 fatal backend error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use tempnorm::backend::BackendKind;
use tempnorm::eval::{value_accuracy, PredictionRecord};
use tempnorm::pipeline::{
    build_index, run_experiment, sweep, tag_and_normalize, verify_audit, ExperimentConfig, SweepAxis, Workspace,
};
use tempnorm::selection::{PoolScopeKind, SelectionStrategy};
use tempnorm::PipelineError;

#[derive(Parser, Debug)]
#[command(name = "tempnorm", version, about = "Temporal expression normalization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct Overrides {
    /// Experiment config (TOML); relative paths inside it resolve against its directory.
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(long)]
    strategy: Option<SelectionStrategy>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    pool_scope: Option<PoolScopeKind>,
    #[arg(long)]
    threshold: Option<f64>,
    /// remote-chat, oracle, rule-based, broken or replay.
    #[arg(long, value_parser = parse_backend)]
    backend: Option<BackendKind>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    resume: bool,
    #[arg(long, value_name = "DIR")]
    dump_prompts: Option<PathBuf>,
    #[arg(short, long, value_name = "DIR")]
    output_dir: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Embed the candidate pool and save it.
    Index {
        #[command(flatten)]
        opts: Overrides,
        /// Defaults to `index_path` from the config, then `<output_dir>/index.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the experiment and write predictions and reports.
    Run {
        #[command(flatten)]
        opts: Overrides,
    },
    /// One experiment per value of `k` or the window length.
    Sweep {
        #[command(flatten)]
        opts: Overrides,
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Vec<usize>,
    },
    /// Normalize spans from an external extractor and score them.
    Tag {
        #[command(flatten)]
        opts: Overrides,
        /// JSONL of {doc_id, begin, end, type}.
        #[arg(long)]
        spans: PathBuf,
    },
    /// Score a predictions file.
    Score { predictions: PathBuf },
    /// Run once and write every rendered prompt.
    DumpPrompts {
        #[command(flatten)]
        opts: Overrides,
        #[arg(long, value_name = "DIR")]
        dir: PathBuf,
    },
    /// Rebuild each logged prompt from earlier predictions and compare digests.
    Verify {
        #[command(flatten)]
        opts: Overrides,
        #[arg(long, default_value_t = 1)]
        run: usize,
    },
}

fn parse_backend(s: &str) -> Result<BackendKind, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("unknown backend {s:?} (remote-chat, oracle, rule-based, broken, replay)"))
}

fn load_config(opts: &Overrides) -> Result<ExperimentConfig, PipelineError> {
    let mut cfg = match &opts.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
            let mut cfg: ExperimentConfig =
                toml::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
            let base = path
                .parent()
                .filter(|p| !p.as_os_str().is_empty())
                .unwrap_or(Path::new("."));
            cfg.resolve_paths(base);
            cfg
        }
        None => ExperimentConfig::default(),
    };
    if let Some(v) = opts.strategy {
        cfg.strategy = v;
    }
    if let Some(v) = opts.k {
        cfg.k = v;
    }
    if let Some(v) = opts.window {
        cfg.window_length = v;
    }
    if let Some(v) = opts.pool_scope {
        cfg.pool_scope = v;
    }
    if let Some(v) = opts.threshold {
        cfg.dissimilarity_threshold = v;
    }
    if let Some(v) = opts.backend {
        cfg.backend.kind = v;
    }
    if let Some(v) = opts.runs {
        cfg.runs = v;
    }
    if let Some(v) = opts.workers {
        cfg.workers = v;
    }
    if opts.resume {
        cfg.resume = true;
    }
    if let Some(v) = &opts.dump_prompts {
        cfg.dump_prompts = Some(v.clone());
    }
    if let Some(v) = &opts.output_dir {
        cfg.output_dir = v.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Index { opts, out } => {
            let cfg = load_config(&opts)?;
            let mut bare = cfg.clone();
            bare.index_path = None;
            let ws = Workspace::load(&bare)?;
            let index = build_index(&cfg, &ws.corpora, ws.provider.as_ref())?;
            let path = out
                .or(cfg.index_path.clone())
                .unwrap_or_else(|| cfg.output_dir.join("index.json"));
            if let Some(dir) = path.parent() {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            index.save(&path).map_err(PipelineError::from)?;
            println!(
                "{} candidates, dimension {}, saved to {}",
                index.len(),
                index.dim(),
                path.display()
            );
        }
        Command::Run { opts } => {
            let cfg = load_config(&opts)?;
            let report = run_experiment(&cfg)?;
            print!("{}", report.table());
            println!(
                "mean accuracy {:.4} (sd {:.4})",
                report.aggregate.mean, report.aggregate.stdev
            );
        }
        Command::Sweep { opts, axis, values } => {
            let cfg = load_config(&opts)?;
            for row in sweep(&cfg, axis, &values)? {
                println!("{}\t{:.4}\t{:.4}", row.value, row.mean, row.stdev);
            }
        }
        Command::Tag { opts, spans } => {
            let cfg = load_config(&opts)?;
            let report = tag_and_normalize(&cfg, &spans)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Score { predictions } => {
            let text = fs::read_to_string(&predictions)
                .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", predictions.display())))?;
            let records = text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(serde_json::from_str)
                .collect::<Result<Vec<PredictionRecord>, _>>()
                .map_err(|e| PipelineError::Input(format!("{}: {e}", predictions.display())))?;
            println!("{}", serde_json::to_string_pretty(&value_accuracy(&records))?);
        }
        Command::DumpPrompts { opts, dir } => {
            let mut cfg = load_config(&opts)?;
            cfg.runs = 1;
            cfg.dump_prompts = Some(dir.clone());
            run_experiment(&cfg)?;
            println!("prompts written to {}", dir.join("run1").display());
        }
        Command::Verify { opts, run } => {
            let cfg = load_config(&opts)?;
            let ws = Workspace::load(&cfg)?;
            let check = verify_audit(&ws, run)?;
            println!("{} of {} prompts verified", check.verified, check.prompts);
            for m in &check.mismatches {
                println!("mismatch: {m}");
            }
            if !check.is_clean() {
                anyhow::bail!("audit replay found {} mismatches", check.mismatches.len());
            }
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<PipelineError>() {
        Some(PipelineError::Config(_)) => 2,
        Some(PipelineError::BackendFatal(_)) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
