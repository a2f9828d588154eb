//! Library side of the `amisr` command: configuration, the individual
//! commands, and a dispatcher shared by the binary and the tests.
//!
//! Machine-readable results go to standard output as JSON; progress and
//! human-readable views go to standard error (or to standard output with
//! `--pretty`). Exit codes: 0 success, 1 check failure, 2 usage or
//! configuration error, 3 runtime failure.

pub mod commands;
pub mod config;
pub mod gradcheck;

use std::path::PathBuf;

use aminet::tensor::OpKind;
use clap::{Parser, Subcommand};
use serde::Serialize;

pub use commands::{
    run_ablate, run_eval, run_gradcheck, run_info, run_infer, run_train, AblationRow, AblationTable,
    GradcheckOptions, InferReport, ModelInfo, TrainReport,
};
pub use config::{Paths, RunConfig};

/// Caps the worker thread count.
pub const ENV_THREADS: &str = "AMISR_THREADS";
/// `1` forces deterministic mode regardless of the config.
pub const ENV_DETERMINISTIC: &str = "AMISR_DETERMINISTIC";
/// Test hook for `gradcheck`: corrupts the adjoint of the named op.
pub const ENV_ADJOINT_FAULT: &str = "AMISR_ADJOINT_FAULT";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    CheckFailed(String),
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Core(#[from] aminet::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use aminet::Error as E;
        match self {
            CliError::CheckFailed(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 3,
            CliError::Core(e) => match e {
                E::Divergence { .. } | E::NonFinite { .. } | E::Io { .. } | E::StaleTape => 3,
                _ => 2,
            },
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "amisr", version, about = "Face super-resolution: train, infer, evaluate, verify")]
pub struct Cli {
    /// Print the human-readable view on standard output instead of JSON.
    #[arg(long, global = true)]
    pub pretty: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model from a run configuration.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Adversarial training with pixel, perceptual and adversarial losses.
        #[arg(long)]
        gan: bool,
    },
    /// Super-resolve every PNG in a directory.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// PSNR/SSIM of super-resolved images against references with the same names.
    Eval {
        #[arg(long)]
        sr: PathBuf,
        #[arg(long)]
        hr: PathBuf,
        /// Also write the report to this file.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Compare tape gradients with central differences (f64).
    Gradcheck {
        /// Seed source; the blocks use fixed tiny shapes.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Check only this block: sa, rdfe, skaf, lgfi, edff or full.
        #[arg(long)]
        block: Option<gradcheck::Block>,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 1e-4)]
        eps: f64,
    },
    /// Train ablation variants under one budget and compare them.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated variant names.
        #[arg(long, value_delimiter = ',', default_value = "full,no_sa,no_rdfe,no_skaf")]
        variants: Vec<String>,
    },
    /// Architecture, parameter count and MACs of a checkpoint.
    Info {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

/// What a command produced: the JSON document, a human-readable view, and
/// an optional check failure that turns into exit code 1 after printing.
#[derive(Debug)]
pub struct Outcome {
    pub json: String,
    pub human: String,
    pub failure: Option<String>,
}

impl Outcome {
    fn new(value: &impl Serialize, human: String) -> Self {
        Outcome {
            json: serde_json::to_string_pretty(value).expect("outputs serialize"),
            human,
            failure: None,
        }
    }
}

fn env_flag(name: &str) -> bool {
    std::env::var(name).is_ok_and(|v| v == "1" || v.eq_ignore_ascii_case("true"))
}

fn load_config(path: &std::path::Path) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(path)?;
    if env_flag(ENV_DETERMINISTIC) {
        cfg.train.deterministic = true;
    }
    Ok(cfg)
}

/// Runs one parsed command.
pub fn execute(command: &Command) -> Result<Outcome, CliError> {
    match command {
        Command::Train { config, gan } => {
            let cfg = load_config(config)?;
            let r = run_train(&cfg, *gan)?;
            let mut human = format!(
                "{} steps ({}), final loss {:.6}, {} checkpoint(s), log {}\n",
                r.steps,
                r.mode,
                r.final_loss,
                r.checkpoints.len(),
                r.log.display()
            );
            if let Some(h) = &r.holdout {
                human += &format!(
                    "held-out: PSNR {:.3} dB vs bicubic {:.3} dB, SSIM {:.4} vs {:.4}\n",
                    h.sr.mean_psnr, h.bicubic.mean_psnr, h.sr.mean_ssim, h.bicubic.mean_ssim
                );
            }
            Ok(Outcome::new(&r, human))
        }
        Command::Infer {
            checkpoint,
            input,
            output,
        } => {
            let r = run_infer(checkpoint, input, output)?;
            let human = format!("{} input(s) → {} image(s) in {}\n", r.inputs, r.outputs.len(), output.display());
            Ok(Outcome::new(&r, human))
        }
        Command::Eval { sr, hr, report } => {
            let r = run_eval(sr, hr)?;
            let json = r.to_json();
            if let Some(path) = report {
                std::fs::write(path, &json)
                    .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
            }
            let mut human = String::new();
            for p in &r.pairs {
                human += &format!("{:<24} PSNR {:>8.3}  SSIM {:.4}\n", p.name, p.psnr, p.ssim);
            }
            human += &format!("mean ({}): PSNR {:.3}  SSIM {:.4}\n", r.count, r.mean_psnr, r.mean_ssim);
            Ok(Outcome {
                json,
                human,
                failure: None,
            })
        }
        Command::Gradcheck {
            config,
            block,
            samples,
            eps,
        } => {
            let seed = match config {
                Some(path) => load_config(path)?.train.seed,
                None => 0,
            };
            let fault = match std::env::var(ENV_ADJOINT_FAULT) {
                Ok(name) if !name.is_empty() => Some(
                    name.parse::<OpKind>()
                        .map_err(|e| CliError::Usage(format!("{ENV_ADJOINT_FAULT}: {e}")))?,
                ),
                _ => None,
            };
            let opts = GradcheckOptions {
                blocks: block.map_or_else(|| gradcheck::Block::ALL.to_vec(), |b| vec![b]),
                samples: *samples,
                eps: *eps,
                seed,
                fault,
            };
            let reports = run_gradcheck(&opts)?;
            let mut human = String::new();
            for r in &reports {
                human += &format!(
                    "{:<5} max rel err {:.3e} over {} coords  {}\n",
                    r.block.name(),
                    r.max_rel_err,
                    r.checked,
                    if r.passed() { "ok" } else { "FAIL" }
                );
            }
            let mut out = Outcome::new(&reports, human);
            out.failure = commands::gradcheck_failure(&reports, fault);
            Ok(out)
        }
        Command::Ablate { config, variants } => {
            let cfg = load_config(config)?;
            let table = run_ablate(&cfg, variants)?;
            let human = table.to_text();
            Ok(Outcome::new(&table, human))
        }
        Command::Info { checkpoint } => {
            let info = run_info(checkpoint)?;
            let human = info.to_text();
            Ok(Outcome::new(&info, human))
        }
    }
}

/// Sizes the global worker pool from `AMISR_THREADS`, if set.
pub fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var(ENV_THREADS) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("{ENV_THREADS} must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))
}
