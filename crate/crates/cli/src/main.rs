//! `datse`: corpus synthesis, training, enhancement and evaluation for
//! domain-adversarial speech enhancement.
//!
//! Exit codes: 0 success, 2 configuration, 3 data, 4 numeric abort, 5 I/O.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use datse_core::dat::TrainMode;
use datse_core::{Error, Exec};

use commands::{Context, EnhanceInput, EvalRequest};
use config::{RunConfig, SEED_ENV};

#[derive(Parser)]
#[command(name = "datse", version, about = "Noise-adaptive speech enhancement with domain-adversarial training")]
struct Cli {
    /// Base directory for every relative path.
    #[arg(long, global = true, default_value = ".")]
    workdir: PathBuf,
    /// Worker thread cap; 1 runs everything sequentially.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// TOML run configuration (defaults apply when omitted).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the source, target and test corpora.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a baseline, DAT or oracle model.
    Train(TrainArgs),
    /// Enhance WAV files with a trained checkpoint.
    Enhance(EnhanceArgs),
    /// Score reference/test pairs and compute gap coverage.
    Eval(EvalArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides `train.mode`.
    #[arg(long, value_parser = parse_mode)]
    mode: Option<TrainMode>,
    /// Overrides `train.epochs`.
    #[arg(long)]
    epochs: Option<usize>,
    /// Overrides `train.lambda`.
    #[arg(long)]
    lambda: Option<f64>,
}

#[derive(Args)]
struct EnhanceArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// A WAV file or a directory of WAV files.
    #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
    input: Option<PathBuf>,
    /// Corpus manifest whose test split is enhanced; also writes eval pairs.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// JSON-lines file of reference/test pairs.
    #[arg(long)]
    pairs: Option<PathBuf>,
    /// Directory for the report files.
    #[arg(long)]
    out: PathBuf,
    /// CSV of `utterance_id,metric,value` rows merged into the report.
    #[arg(long)]
    external_scores: Option<PathBuf>,
    /// Per-utterance report CSVs of the baseline, adapted and oracle models.
    #[arg(long, num_args = 3, value_names = ["BASELINE", "ADAPTED", "ORACLE"])]
    gap: Option<Vec<PathBuf>>,
}

fn parse_mode(s: &str) -> Result<TrainMode, String> {
    match s {
        "baseline" => Ok(TrainMode::Baseline),
        "dat" => Ok(TrainMode::Dat),
        "oracle" => Ok(TrainMode::Oracle),
        other => Err(format!("unknown mode {other:?} (baseline, dat or oracle)")),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Usage(_) => 2,
        Error::NumericAbort(_) => 4,
        Error::Io(_) => 5,
        _ => 3,
    }
}

fn run(cli: Cli) -> datse_core::Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref().map(|p| cli.workdir.join(p)).as_deref())?;
    cfg.apply_seed_override(std::env::var(SEED_ENV).ok().as_deref())?;
    let exec = match cli.threads {
        Some(0) => return Err(Error::Config("--threads must be at least 1".into())),
        Some(1) => Exec::Sequential,
        _ => Exec::Parallel,
    };
    #[cfg(feature = "parallel")]
    if let Some(n) = cli.threads {
        if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            log::warn!("worker pool already initialized; --threads ignored");
        }
    }
    let ctx = Context { workdir: cli.workdir, exec };
    match cli.command {
        Command::Synth { out } => commands::synth(&ctx, &cfg, &out),
        Command::Train(a) => {
            if let Some(m) = a.mode {
                cfg.train.mode = m;
            }
            if let Some(e) = a.epochs {
                cfg.train.epochs = e;
            }
            if let Some(l) = a.lambda {
                cfg.train.lambda = l;
            }
            commands::train(&ctx, &mut cfg, &a.manifest, &a.out).map(|_| ())
        }
        Command::Enhance(a) => {
            let input = match (a.input, a.manifest) {
                (Some(p), _) => EnhanceInput::Audio(p),
                (None, Some(m)) => EnhanceInput::Manifest(m),
                (None, None) => return Err(Error::Usage("enhance needs --input or --manifest".into())),
            };
            commands::enhance_cmd(&ctx, &cfg, &a.checkpoint, &input, &a.out).map(|_| ())
        }
        Command::Eval(a) => {
            let gap = a.gap.as_ref().map(|g| [g[0].as_path(), g[1].as_path(), g[2].as_path()]);
            let req = EvalRequest {
                pairs: a.pairs.as_deref(),
                out: &a.out,
                external_scores: a.external_scores.as_deref(),
                gap,
            };
            commands::eval_cmd(&ctx, &cfg, &req).map(|_| ())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
