use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use aminet::data::{bicubic_resize, list_images, png_read, png_write, Dataset};
use aminet::metrics::{evaluate, MetricReport};
use aminet::network::{build, checkpoint, complexity, make_variant, ArchConfig, Complexity, ParamStore};
use aminet::tensor::{set_adjoint_fault, OpKind};
use aminet::training::{
    evaluate_dataset, super_resolve, train, train_gan, BatchPlan, HoldoutReport, RunOutput, TrainConfig,
};
use aminet::Rng;
use serde::{Deserialize, Serialize};

use crate::gradcheck::{check_block, Block, BlockReport, THRESHOLD};
use crate::{CliError, RunConfig};

/// Images per forward pass when evaluating held-out samples.
const EVAL_CHUNK: usize = 4;

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn load_data(cfg: &RunConfig) -> Result<(Dataset, Dataset), CliError> {
    let data = Dataset::load(&cfg.data, cfg.arch.input_size)?;
    if data.skipped > 0 {
        log::warn!("{} unreadable image(s) skipped", data.skipped);
    }
    Ok(data.split_holdout(cfg.data.holdout)?)
}

fn plan(cfg: &RunConfig) -> BatchPlan {
    BatchPlan {
        batch_size: cfg.data.batch_size,
        shuffle_seed: cfg.data.shuffle_seed,
    }
}

// ---- train ----------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub mode: String,
    pub steps: usize,
    pub train_samples: usize,
    pub final_loss: f64,
    pub log: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    /// Metrics on the held-out split, when there is one.
    pub holdout: Option<HoldoutReport>,
}

pub const LOG_FILE: &str = "log.jsonl";
pub const HOLDOUT_FILE: &str = "holdout_metrics.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";

fn initial_weights(cfg: &RunConfig) -> Result<ParamStore<f32>, CliError> {
    match &cfg.paths.checkpoint {
        Some(path) => {
            let (store, arch) = checkpoint::load::<f32>(path)?;
            if arch != cfg.arch {
                return Err(CliError::Usage(format!(
                    "checkpoint {} was saved for a different architecture",
                    path.display()
                )));
            }
            Ok(store)
        }
        None => Ok(build(&cfg.arch, &mut Rng::new(cfg.train.seed))?),
    }
}

/// Trains per `cfg` (adversarially when `gan`), writing the log,
/// checkpoints and held-out metrics under `cfg.paths.out_dir`.
pub fn run_train(cfg: &RunConfig, gan: bool) -> Result<TrainReport, CliError> {
    cfg.validate()?;
    let (train_set, holdout) = load_data(cfg)?;
    let out_dir = &cfg.paths.out_dir;
    let ckpt_dir = out_dir.join(CHECKPOINT_DIR);
    create_dir(&ckpt_dir)?;
    let log_path = out_dir.join(LOG_FILE);
    let log_file =
        File::create(&log_path).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", log_path.display())))?;
    let mut log = BufWriter::new(log_file);

    let mut store = initial_weights(cfg)?;
    log::info!(
        "training {} for {} steps on {} samples ({} held out)",
        if gan { "adversarially" } else { "with pixel loss" },
        cfg.train.steps,
        train_set.len(),
        holdout.len()
    );
    let out = RunOutput {
        log: Some(&mut log),
        checkpoint_dir: Some(&ckpt_dir),
    };
    let summary = if gan {
        train_gan(&mut store, &cfg.arch, &train_set, plan(cfg), &cfg.train, out)?.0
    } else {
        train(&mut store, &cfg.arch, &train_set, plan(cfg), &cfg.train, out)?
    };
    log.flush()
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", log_path.display())))?;

    let holdout = if holdout.is_empty() {
        None
    } else {
        let report = evaluate_dataset(&store, &cfg.arch, &holdout, EVAL_CHUNK)?;
        write_file(
            &out_dir.join(HOLDOUT_FILE),
            &serde_json::to_string_pretty(&report).expect("report serializes"),
        )?;
        log::info!(
            "held-out PSNR {:.3} dB (bicubic {:.3} dB), SSIM {:.4}",
            report.sr.mean_psnr,
            report.bicubic.mean_psnr,
            report.sr.mean_ssim
        );
        Some(report)
    };
    Ok(TrainReport {
        mode: if gan { "gan" } else { "plain" }.into(),
        steps: summary.steps,
        train_samples: train_set.len(),
        final_loss: summary.final_loss,
        log: log_path,
        checkpoints: summary.checkpoints,
        holdout,
    })
}

// ---- infer ----------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferReport {
    pub inputs: usize,
    pub outputs: Vec<PathBuf>,
}

/// Super-resolves every PNG in `input`, writing `<name>_sr.png` and the
/// bicubic baseline `<name>_bicubic.png` to `output`.
pub fn run_infer(checkpoint_path: &Path, input: &Path, output: &Path) -> Result<InferReport, CliError> {
    let (store, arch) = checkpoint::load::<f32>(checkpoint_path)?;
    if !input.is_dir() {
        return Err(CliError::Usage(format!("input {} is not a directory", input.display())));
    }
    let files = list_images(input, "*.png")?;
    create_dir(output)?;
    let lr = arch.lr_size();
    let mut outputs = Vec::with_capacity(2 * files.len());
    for path in &files {
        let img = png_read(path)?;
        if img.height() != lr || img.width() != lr {
            return Err(CliError::Usage(format!(
                    "{} is {}×{}, but the checkpoint expects {lr}×{lr} inputs (×{} to {})",
                    path.display(),
                    img.height(),
                    img.width(),
                    arch.scale,
                    arch.input_size
                )));
        }
        let up = bicubic_resize(&img, arch.input_size, arch.input_size)?;
        let sr = super_resolve(&store, &arch, &[&up])?.remove(0);
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        for (suffix, im) in [("sr", &sr), ("bicubic", &up)] {
            let dest = output.join(format!("{stem}_{suffix}.png"));
            png_write(&dest, im)?;
            outputs.push(dest);
        }
    }
    log::info!("wrote {} images for {} inputs", outputs.len(), files.len());
    Ok(InferReport {
        inputs: files.len(),
        outputs,
    })
}

// ---- eval -----------------------------------------------------------------

pub fn run_eval(sr: &Path, hr: &Path) -> Result<MetricReport, CliError> {
    for dir in [sr, hr] {
        if !dir.is_dir() {
            return Err(CliError::Usage(format!("{} is not a directory", dir.display())));
        }
    }
    Ok(evaluate(sr, hr)?)
}

// ---- gradcheck ------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct GradcheckOptions {
    pub blocks: Vec<Block>,
    pub samples: usize,
    pub eps: f64,
    pub seed: u64,
    /// Corrupts the adjoint of this op for the duration of the check.
    pub fault: Option<OpKind>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            blocks: Block::ALL.to_vec(),
            samples: 100,
            eps: 1e-4,
            seed: 0,
            fault: None,
        }
    }
}

/// Clears the injected fault even if a check errors out.
struct FaultGuard;

impl Drop for FaultGuard {
    fn drop(&mut self) {
        set_adjoint_fault(None);
    }
}

pub fn run_gradcheck(opts: &GradcheckOptions) -> Result<Vec<BlockReport>, CliError> {
    let _guard = FaultGuard;
    set_adjoint_fault(opts.fault);
    opts.blocks
        .iter()
        .map(|&b| {
            let r = check_block(b, opts.samples, opts.eps, opts.seed)?;
            log::info!("{b}: max relative error {:.3e} over {} coordinates", r.max_rel_err, r.checked);
            Ok(r)
        })
        .collect()
}

/// Describes the first failing block, naming its worst coordinate.
pub fn gradcheck_failure(reports: &[BlockReport], fault: Option<OpKind>) -> Option<String> {
    let bad = reports.iter().find(|r| !r.passed())?;
    let mut msg = format!(
        "gradient check failed for block `{}`: relative error {:.3e} ≥ {THRESHOLD:e}",
        bad.block, bad.max_rel_err
    );
    if let Some(w) = &bad.worst {
        let _ = write!(
            msg,
            " at {}[{}] (analytic {:.6e}, numeric {:.6e})",
            w.param, w.index, w.analytic, w.numeric
        );
    }
    if let Some(op) = fault {
        let _ = write!(msg, "; adjoint of op `{op}` was deliberately corrupted");
    }
    Some(msg)
}

// ---- ablate ---------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub params: usize,
    pub steps: usize,
    pub final_loss: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub bicubic_psnr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, variant: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    pub fn to_text(&self) -> String {
        let w = self.rows.iter().map(|r| r.variant.len()).max().unwrap_or(0).max(7);
        let mut s = format!(
            "{:<w$}  {:>9}  {:>6}  {:>10}  {:>8}  {:>7}  {:>8}\n",
            "variant", "params", "steps", "final_loss", "psnr", "ssim", "bicubic"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<w$}  {:>9}  {:>6}  {:>10.6}  {:>8.3}  {:>7.4}  {:>8.3}",
                r.variant, r.params, r.steps, r.final_loss, r.psnr, r.ssim, r.bicubic_psnr
            );
        }
        s
    }
}

pub const DEFAULT_VARIANTS: &[&str] = &["full", "no_sa", "no_rdfe", "no_skaf"];
pub const ABLATION_JSON: &str = "ablation.json";
pub const ABLATION_TEXT: &str = "ablation.txt";

/// Trains each variant from the same seed, data order and step budget and
/// scores it on the held-out split.
pub fn run_ablate(cfg: &RunConfig, variants: &[String]) -> Result<AblationTable, CliError> {
    cfg.validate()?;
    let archs: Vec<ArchConfig> = variants
        .iter()
        .map(|v| make_variant(&cfg.arch, v).map_err(CliError::from))
        .collect::<Result<_, _>>()?;
    if cfg.data.holdout == 0 {
        return Err(CliError::Usage("ablation needs data.holdout ≥ 1 to score variants".into()));
    }
    let (train_set, holdout) = load_data(cfg)?;
    create_dir(&cfg.paths.out_dir)?;
    let train_cfg = TrainConfig {
        checkpoint_every: 0,
        ..cfg.train.clone()
    };
    let mut rows = Vec::with_capacity(variants.len());
    for (name, arch) in variants.iter().zip(&archs) {
        log::info!("ablation: training `{name}`");
        let mut store = build::<f32>(arch, &mut Rng::new(cfg.train.seed))?;
        let summary = train(&mut store, arch, &train_set, plan(cfg), &train_cfg, RunOutput::default())?;
        checkpoint::save(cfg.paths.out_dir.join(format!("{name}.amck")), &store, arch)?;
        let report = evaluate_dataset(&store, arch, &holdout, EVAL_CHUNK)?;
        rows.push(AblationRow {
            variant: name.clone(),
            params: store.num_scalars(),
            steps: summary.steps,
            final_loss: summary.final_loss,
            psnr: report.sr.mean_psnr,
            ssim: report.sr.mean_ssim,
            bicubic_psnr: report.bicubic.mean_psnr,
        });
    }
    let table = AblationTable { rows };
    write_file(
        &cfg.paths.out_dir.join(ABLATION_JSON),
        &serde_json::to_string_pretty(&table).expect("table serializes"),
    )?;
    write_file(&cfg.paths.out_dir.join(ABLATION_TEXT), &table.to_text())?;
    Ok(table)
}

// ---- info -----------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub config: ArchConfig,
    pub dtype: String,
    pub tensors: usize,
    pub params: usize,
    pub macs: u64,
}

impl ModelInfo {
    pub fn to_text(&self) -> String {
        let a = &self.config;
        format!(
            "base channels {}, heads {}, input {}×{}, scale ×{}, dtype {}\n\
             parameters {} ({:.3} M) in {} tensors\n\
             MACs per image {} ({:.3} G)\n",
            a.base_channels,
            a.heads,
            a.input_size,
            a.input_size,
            a.scale,
            self.dtype,
            self.params,
            self.params as f64 / 1e6,
            self.tensors,
            self.macs,
            self.macs as f64 / 1e9
        )
    }
}

pub fn run_info(path: &Path) -> Result<ModelInfo, CliError> {
    let header = checkpoint::peek(path)?;
    let dtype = header.tensors.first().map_or(aminet::DType::F32, |t| t.dtype);
    let Complexity { params, macs } = match dtype {
        aminet::DType::F32 => {
            let (store, arch) = checkpoint::load::<f32>(path)?;
            complexity(&store, &arch)?
        }
        aminet::DType::F64 => {
            let (store, arch) = checkpoint::load::<f64>(path)?;
            complexity(&store, &arch)?
        }
    };
    Ok(ModelInfo {
        config: header.config,
        dtype: dtype.to_string(),
        tensors: header.tensors.len(),
        params,
        macs,
    })
}

/// Output images of `run_infer` for one input name.
pub fn infer_outputs(output: &Path, stem: &str) -> (PathBuf, PathBuf) {
    (
        output.join(format!("{stem}_sr.png")),
        output.join(format!("{stem}_bicubic.png")),
    )
}
