use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    build_discriminator, disc_forward, discriminator_loss, generator_adv_loss, perceptual_loss, pixel_loss,
    total_loss, Adam, AdamConfig, LossParts, LossWeights, PerceptualProxy, PERCEPTUAL_SEED,
};
use crate::data::{Batcher, Dataset};
use crate::error::{Error, Result};
use crate::metrics::psnr_slices;
use crate::network::{checkpoint, ArchConfig, Aminet, ParamStore};
use crate::tensor::{Graph, Rng, Scalar, Tensor, Var};

/// Training hyperparameters. Learning rates are constant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    /// Overrides the manifest batch size when set.
    pub batch: Option<usize>,
    /// Plain (pixel-loss) training.
    pub lr: f64,
    /// Adversarial training: generator and discriminator.
    pub lr_g: f64,
    pub lr_d: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub loss_weights: LossWeights,
    /// Checkpoint after every step index divisible by this (0 disables);
    /// a final checkpoint is always written.
    pub checkpoint_every: usize,
    /// Seeds weight initialization (the data order comes from the manifest).
    pub seed: u64,
    /// Kept for configuration compatibility; kernels always reduce in a
    /// fixed order, so runs are bit-reproducible regardless.
    pub deterministic: bool,
    /// Width of the first discriminator level.
    pub disc_base: usize,
    /// Feature extractor file for the perceptual loss; the pinned-seed
    /// random extractor is used when absent.
    pub perceptual_weights: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 500,
            batch: None,
            lr: 2e-4,
            lr_g: 1e-4,
            lr_d: 4e-4,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
            loss_weights: LossWeights::default(),
            checkpoint_every: 100,
            seed: 0,
            deterministic: true,
            disc_base: 32,
            perceptual_weights: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss_weights.validate()?;
        for (name, v) in [("lr", self.lr), ("lr_g", self.lr_g), ("lr_d", self.lr_d), ("eps", self.eps)] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if self.batch == Some(0) || self.disc_base == 0 {
            return Err(Error::Config("batch and disc_base must be positive".into()));
        }
        Ok(())
    }

    pub fn adam(&self, lr: f64) -> AdamConfig {
        AdamConfig {
            lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn perceptual_proxy(&self) -> Result<PerceptualProxy<f32>> {
        match &self.perceptual_weights {
            Some(p) => PerceptualProxy::load(p),
            None => Ok(PerceptualProxy::new(PERCEPTUAL_SEED)),
        }
    }
}

/// Where a run writes its artifacts. Either part may be absent.
#[derive(Default)]
pub struct RunOutput<'a> {
    /// Receives one JSON object per step.
    pub log: Option<&'a mut dyn Write>,
    /// Receives `step_{s:06}.amck` and `final.amck` generator checkpoints.
    pub checkpoint_dir: Option<&'a Path>,
}

impl RunOutput<'_> {
    fn record<R: Serialize>(&mut self, rec: &R) -> Result<()> {
        if let Some(w) = self.log.as_deref_mut() {
            serde_json::to_writer(&mut *w, rec)?;
            w.write_all(b"\n").map_err(|e| Error::io("training log", e))?;
        }
        Ok(())
    }

    fn checkpoint(&self, name: &str, store: &ParamStore<f32>, arch: &ArchConfig) -> Result<Option<PathBuf>> {
        match self.checkpoint_dir {
            Some(dir) => {
                let path = dir.join(name);
                checkpoint::save(&path, store, arch)?;
                Ok(Some(path))
            }
            None => Ok(None),
        }
    }
}

pub fn checkpoint_name(step: usize) -> String {
    format!("step_{step:06}.amck")
}

pub const FINAL_CHECKPOINT: &str = "final.amck";

/// One plain-training log record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub psnr_train: f64,
}

/// One adversarial-training log record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanStepRecord {
    pub step: usize,
    /// Generator objective (weighted total).
    pub loss: f64,
    pub loss_pix: f64,
    pub loss_pcp: f64,
    pub loss_adv: f64,
    pub loss_d: f64,
    /// Discriminator accuracy on the batch's real and generated images.
    pub d_acc: f64,
    pub psnr_train: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub steps: usize,
    pub final_loss: f64,
    /// Loss of every step, in order.
    pub losses: Vec<f64>,
    pub checkpoints: Vec<PathBuf>,
}

/// Mean per-sample PSNR of a batch.
fn batch_psnr(sr: &Tensor<f32>, hr: &Tensor<f32>) -> f64 {
    let n = sr.shape().n();
    let per = sr.numel() / n;
    (0..n)
        .map(|i| {
            let r = i * per..(i + 1) * per;
            psnr_slices(&sr.data()[r.clone()], &hr.data()[r], 1.0).expect("same shape")
        })
        .sum::<f64>()
        / n as f64
}

fn batcher(data: &Dataset, cfg: &TrainConfig, shuffle_seed: u64, manifest_batch: usize) -> Result<Batcher> {
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    Batcher::new(data.len(), cfg.batch.unwrap_or(manifest_batch), shuffle_seed)
}

/// A non-finite intermediate during a step means the run diverged.
fn diverged<T>(r: Result<T>, step: usize, lr: f64, grad_norm: f64) -> Result<T> {
    r.map_err(|e| match e {
        Error::NonFinite { .. } => Error::Divergence { step, lr, grad_norm },
        other => other,
    })
}

/// Data-order settings taken from the manifest.
#[derive(Clone, Copy, Debug)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub shuffle_seed: u64,
}

/// Pixel-loss training of `store` with Adam at `cfg.lr`.
pub fn train(
    store: &mut ParamStore<f32>,
    arch: &ArchConfig,
    data: &Dataset,
    plan: BatchPlan,
    cfg: &TrainConfig,
    mut out: RunOutput<'_>,
) -> Result<TrainSummary> {
    cfg.validate()?;
    let mut batches = batcher(data, cfg, plan.shuffle_seed, plan.batch_size)?;
    let mut adam = Adam::new(cfg.adam(cfg.lr));
    let mut summary = TrainSummary {
        steps: cfg.steps,
        final_loss: f64::NAN,
        losses: Vec::with_capacity(cfg.steps),
        checkpoints: Vec::new(),
    };
    let mut grad_norm = 0.0;
    for step in 0..cfg.steps {
        let (lr_up, hr) = data.batch(&batches.next_batch())?;
        let g = Graph::new();
        let bound = store.bind(&g);
        let net = Aminet::bind(&bound, arch)?;
        let (sr, loss) = diverged(
            (|| {
                let sr = net.forward(&g, g.constant(lr_up))?;
                let loss = pixel_loss(&g, sr, g.constant(hr.clone()))?;
                Ok((sr, loss))
            })(),
            step,
            cfg.lr,
            grad_norm,
        )?;
        let loss_val = g.value(loss).item().as_f64();
        if !loss_val.is_finite() {
            return Err(Error::Divergence {
                step,
                lr: cfg.lr,
                grad_norm,
            });
        }
        let psnr_train = batch_psnr(&g.value(sr), &hr);
        let mut grads = g.backward(loss)?;
        let pg = bound.collect_grads(&mut grads)?;
        grad_norm = pg.norm();
        adam.step(store, &pg)?;

        summary.losses.push(loss_val);
        out.record(&StepRecord {
            step,
            loss: loss_val,
            psnr_train,
        })?;
        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 {
            summary.checkpoints.extend(out.checkpoint(&checkpoint_name(step), store, arch)?);
        }
    }
    summary.checkpoints.extend(out.checkpoint(FINAL_CHECKPOINT, store, arch)?);
    summary.final_loss = summary.losses.last().copied().unwrap_or(f64::NAN);
    Ok(summary)
}

/// Discriminator update on one batch. Generated images enter as constants,
/// so no gradient reaches the generator. Returns (loss, accuracy).
pub fn discriminator_step(
    disc: &mut ParamStore<f32>,
    adam: &mut Adam<f32>,
    real: &Tensor<f32>,
    fake: &Tensor<f32>,
) -> Result<(f64, f64)> {
    let g = Graph::new();
    let bound = disc.bind(&g);
    let real_logits = disc_forward(&g, &bound, g.constant(real.clone()))?;
    let fake_logits = disc_forward(&g, &bound, g.constant(fake.clone()))?;
    let acc = {
        let score = |v: Var, sign: f32| -> usize {
            let t = g.value(v);
            let n = t.shape().n();
            let per = t.numel() / n;
            t.data()
                .chunks(per)
                .filter(|c| sign * c.iter().sum::<f32>() > 0.0)
                .count()
        };
        let n = real.shape().n() + fake.shape().n();
        (score(real_logits, 1.0) + score(fake_logits, -1.0)) as f64 / n as f64
    };
    let loss = discriminator_loss(&g, real_logits, fake_logits)?;
    let loss_val = g.value(loss).item().as_f64();
    let mut grads = g.backward(loss)?;
    let pg = bound.collect_grads(&mut grads)?;
    adam.step(disc, &pg)?;
    Ok((loss_val, acc))
}

/// Adversarial training with one discriminator step, then one generator
/// step, per batch. The discriminator is created from `cfg.seed`.
/// Generator loss is `λ_pix·L_pix + λ_pcp·L_pcp + λ_adv·L_adv`; terms with a
/// zero weight are not evaluated.
pub fn train_gan(
    gen: &mut ParamStore<f32>,
    arch: &ArchConfig,
    data: &Dataset,
    plan: BatchPlan,
    cfg: &TrainConfig,
    mut out: RunOutput<'_>,
) -> Result<(TrainSummary, ParamStore<f32>)> {
    cfg.validate()?;
    let w = cfg.loss_weights;
    let proxy = if w.pcp > 0.0 { Some(cfg.perceptual_proxy()?) } else { None };
    let mut disc = build_discriminator::<f32>(cfg.disc_base, &mut Rng::derive(cfg.seed, 1))?;
    let mut batches = batcher(data, cfg, plan.shuffle_seed, plan.batch_size)?;
    let mut adam_g = Adam::new(cfg.adam(cfg.lr_g));
    let mut adam_d = Adam::new(cfg.adam(cfg.lr_d));
    let mut summary = TrainSummary {
        steps: cfg.steps,
        final_loss: f64::NAN,
        losses: Vec::with_capacity(cfg.steps),
        checkpoints: Vec::new(),
    };
    let mut grad_norm = 0.0;
    for step in 0..cfg.steps {
        let (lr_up, hr) = data.batch(&batches.next_batch())?;
        // Generator tape: parameters trainable, discriminator frozen.
        let g = Graph::new();
        let bound = gen.bind(&g);
        let net = Aminet::bind(&bound, arch)?;
        let sr = diverged(net.forward(&g, g.constant(lr_up)), step, cfg.lr_g, grad_norm)?;
        let sr_val = g.tensor(sr);

        // Discriminator tape: generated images detached.
        let (loss_d, d_acc) = diverged(
            discriminator_step(&mut disc, &mut adam_d, &hr, &sr_val),
            step,
            cfg.lr_d,
            grad_norm,
        )?;

        let (parts, loss) = diverged(
            (|| {
                let hv = g.constant(hr.clone());
                let pix = pixel_loss(&g, sr, hv)?;
                let pcp = match &proxy {
                    Some(p) => Some(perceptual_loss(&g, sr, hv, p)?),
                    None => None,
                };
                let adv = if w.adv > 0.0 {
                    let frozen = disc.bind_frozen(&g);
                    Some(generator_adv_loss(&g, disc_forward(&g, &frozen, sr)?)?)
                } else {
                    None
                };
                let parts = LossParts { pix, pcp, adv };
                let loss = total_loss(&g, &parts, &w)?;
                Ok((parts, loss))
            })(),
            step,
            cfg.lr_g,
            grad_norm,
        )?;
        let LossParts { pix, pcp, adv } = parts;
        let val = |v: Option<Var>| v.map_or(0.0, |v| g.value(v).item().as_f64());
        let loss_val = g.value(loss).item().as_f64();
        if !loss_val.is_finite() || !loss_d.is_finite() {
            return Err(Error::Divergence {
                step,
                lr: cfg.lr_g,
                grad_norm,
            });
        }
        let rec = GanStepRecord {
            step,
            loss: loss_val,
            loss_pix: val(Some(pix)),
            loss_pcp: val(pcp),
            loss_adv: val(adv),
            loss_d,
            d_acc,
            psnr_train: batch_psnr(&sr_val, &hr),
        };
        let mut grads = g.backward(loss)?;
        let pg = bound.collect_grads(&mut grads)?;
        grad_norm = pg.norm();
        adam_g.step(gen, &pg)?;

        summary.losses.push(loss_val);
        out.record(&rec)?;
        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 {
            summary.checkpoints.extend(out.checkpoint(&checkpoint_name(step), gen, arch)?);
        }
    }
    summary.checkpoints.extend(out.checkpoint(FINAL_CHECKPOINT, gen, arch)?);
    summary.final_loss = summary.losses.last().copied().unwrap_or(f64::NAN);
    Ok((summary, disc))
}
