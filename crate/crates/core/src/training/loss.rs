use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{checkpoint, ParamStore};
use crate::tensor::{init_params, ConvOptions, Graph, InitScheme, Rng, Scalar, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub pix: f64,
    pub pcp: f64,
    pub adv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            pix: 1.0,
            pcp: 0.01,
            adv: 0.01,
        }
    }
}

impl LossWeights {
    pub fn pixel_only() -> Self {
        LossWeights {
            pix: 1.0,
            pcp: 0.0,
            adv: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.pix, self.pcp, self.adv].iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!("loss weights must be finite and ≥ 0, got {self:?}")));
        }
        Ok(())
    }

    /// `λ_pix·pix + λ_pcp·pcp + λ_adv·adv`.
    pub fn total(&self, pix: f64, pcp: f64, adv: f64) -> f64 {
        self.pix * pix + self.pcp * pcp + self.adv * adv
    }
}

fn same_shape(op: &'static str, a: Var, b: Var) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{} vs {}", a.shape(), b.shape())));
    }
    Ok(())
}

/// Mean absolute difference.
pub fn pixel_loss<T: Scalar>(g: &Graph<T>, sr: Var, hr: Var) -> Result<Var> {
    same_shape("pixel_loss", sr, hr)?;
    let d = g.sub(sr, hr)?;
    g.mean_abs(d)
}

/// Seed of the default perceptual extractor.
pub const PERCEPTUAL_SEED: u64 = 0x5EED_F00D;
/// Channel widths of the perceptual extractor, input first.
pub const PERCEPTUAL_WIDTHS: [usize; 4] = [3, 16, 32, 64];

/// Fixed feature extractor for the perceptual loss: three stride-2 3×3
/// convolutions, each followed by GELU. Its weights enter graphs only as
/// constants.
#[derive(Clone, Debug, PartialEq)]
pub struct PerceptualProxy<T: Scalar> {
    layers: Vec<(Tensor<T>, Tensor<T>)>,
}

impl<T: Scalar> PerceptualProxy<T> {
    /// He-initialized from `seed`; equal seeds give equal extractors.
    pub fn new(seed: u64) -> Self {
        let mut rng = Rng::new(seed);
        let layers = PERCEPTUAL_WIDTHS
            .windows(2)
            .map(|w| {
                let k = init_params([w[1], w[0], 3, 3], InitScheme::He, &mut rng).expect("valid shape");
                (k, Tensor::zeros([1, 1, 1, w[1]]))
            })
            .collect();
        PerceptualProxy { layers }
    }

    /// Layers `pcp{i}.w` / `pcp{i}.b` (i = 1, 2, …) from a store, e.g. one
    /// holding exported features of a pretrained network.
    pub fn from_store(store: &ParamStore<T>) -> Result<Self> {
        let mut layers = Vec::new();
        for i in 1.. {
            let (wn, bn) = (format!("pcp{i}.w"), format!("pcp{i}.b"));
            let Some(w) = store.get(&wn) else { break };
            let b = store.get(&bn).ok_or(Error::MissingParam(bn))?;
            layers.push((w.clone(), b.clone()));
        }
        if layers.is_empty() {
            return Err(Error::MissingParam("pcp1.w".into()));
        }
        Ok(PerceptualProxy { layers })
    }

    /// Reads layers from a checkpoint-format file (its config is ignored).
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (store, _) = checkpoint::load::<T>(path)?;
        Self::from_store(&store)
    }

    pub fn to_store(&self) -> ParamStore<T> {
        let mut s = ParamStore::new();
        for (i, (w, b)) in self.layers.iter().enumerate() {
            s.insert(format!("pcp{}.w", i + 1), w.clone()).expect("unique");
            s.insert(format!("pcp{}.b", i + 1), b.clone()).expect("unique");
        }
        s
    }

    pub fn layers(&self) -> &[(Tensor<T>, Tensor<T>)] {
        &self.layers
    }

    pub fn features(&self, g: &Graph<T>, x: Var) -> Result<Vec<Var>> {
        let mut out = Vec::with_capacity(self.layers.len());
        let mut f = x;
        for (w, b) in &self.layers {
            let (w, b) = (g.constant(w.clone()), g.constant(b.clone()));
            f = g.conv2d(f, w, Some(b), ConvOptions::strided(2, 1))?;
            f = g.gelu(f)?;
            out.push(f);
        }
        Ok(out)
    }
}

/// `Σ_l mean |φ_l(sr) − φ_l(hr)|`.
pub fn perceptual_loss<T: Scalar>(g: &Graph<T>, sr: Var, hr: Var, proxy: &PerceptualProxy<T>) -> Result<Var> {
    same_shape("perceptual_loss", sr, hr)?;
    let fs = proxy.features(g, sr)?;
    let fh = proxy.features(g, hr)?;
    let mut total: Option<Var> = None;
    for (a, b) in fs.into_iter().zip(fh) {
        let d = g.sub(a, b)?;
        let l = g.mean_abs(d)?;
        total = Some(match total {
            Some(t) => g.add(t, l)?,
            None => l,
        });
    }
    Ok(total.expect("at least one layer"))
}

fn check_logits<T: Scalar>(g: &Graph<T>, logits: Var) -> Result<()> {
    if !g.value(logits).is_finite() {
        return Err(Error::NonFinite { op: "discriminator logits" });
    }
    Ok(())
}

/// `E[−log σ(D)]` against `target` (1 real, 0 fake), with the logit map of
/// each sample mean-reduced first.
pub fn bce_mean<T: Scalar>(g: &Graph<T>, logits: Var, target: f64) -> Result<Var> {
    check_logits(g, logits)?;
    let per_sample = g.sample_mean(logits)?;
    let l = g.bce_with_logits(per_sample, target)?;
    g.mean(l)
}

/// Discriminator loss `−E[log D(hr)] − E[log(1 − D(sr))]`.
pub fn discriminator_loss<T: Scalar>(g: &Graph<T>, real_logits: Var, fake_logits: Var) -> Result<Var> {
    let real = bce_mean(g, real_logits, 1.0)?;
    let fake = bce_mean(g, fake_logits, 0.0)?;
    g.add(real, fake)
}

/// Generator adversarial loss `−E[log D(sr)]`.
pub fn generator_adv_loss<T: Scalar>(g: &Graph<T>, fake_logits: Var) -> Result<Var> {
    bce_mean(g, fake_logits, 1.0)
}

/// Both adversarial terms `(L_dis, L_adv)` from one set of logits. Under
/// the two-tape training protocol they are built on separate graphs so
/// each reaches only its own parameters.
pub fn adversarial_losses<T: Scalar>(g: &Graph<T>, real_logits: Var, fake_logits: Var) -> Result<(Var, Var)> {
    Ok((
        discriminator_loss(g, real_logits, fake_logits)?,
        generator_adv_loss(g, fake_logits)?,
    ))
}

/// Loss terms of one generator step; absent terms count as zero.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub pix: Var,
    pub pcp: Option<Var>,
    pub adv: Option<Var>,
}

/// `λ_pix·L_pix + λ_pcp·L_pcp + λ_adv·L_adv` on the graph.
pub fn total_loss<T: Scalar>(g: &Graph<T>, parts: &LossParts, w: &LossWeights) -> Result<Var> {
    let mut total = if w.pix == 1.0 { parts.pix } else { g.scale(parts.pix, w.pix)? };
    for (term, weight) in [(parts.pcp, w.pcp), (parts.adv, w.adv)] {
        if let Some(t) = term {
            let s = g.scale(t, weight)?;
            total = g.add(total, s)?;
        }
    }
    Ok(total)
}
