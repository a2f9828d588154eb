//! The full network: stem → three encoders (LGFI, downsample) → two
//! bottleneck LGFIs → three decoders (upsample, EDFF with the encoder skip,
//! LGFI) → output conv plus the input image.

use super::{ArchConfig, Bound, ParamStore};
use crate::blocks::{
    downsample, edff_forward, join, lgfi_forward, upsample, ConvP, DownParams, EdffParams, Initializer, LgfiParams,
    UpParams,
};
use crate::error::{Error, Result};
use crate::tensor::{ConvOptions, Graph, InitScheme, Rng, Scalar, Shape, Var};

pub const STAGES: usize = 3;

/// Channel count entering encoder `i` (0-based); decoder `i` produces the
/// width of encoder `STAGES − 1 − i`.
fn stage_channels(c: usize, i: usize) -> usize {
    c << i
}

/// Allocates and initializes every parameter for `config`: He kernels, zero
/// biases, unit norm gains, and a zero output conv so the untrained network
/// is the identity on its input.
pub fn build<T: Scalar>(config: &ArchConfig, rng: &mut Rng) -> Result<ParamStore<T>> {
    config.validate()?;
    let c = config.base_channels;
    let opts = config.lgfi_options();
    let mut store = ParamStore::new();
    let mut init = Initializer::new(&mut store, rng);

    init.conv("stem.conv", c, 3, 3)?;
    for i in 0..STAGES {
        let ci = stage_channels(c, i);
        let name = format!("enc{}", i + 1);
        LgfiParams::init(&mut init, &join(&name, "lgfi"), ci, &opts)?;
        DownParams::init(&mut init, &join(&name, "down"), ci)?;
    }
    let deep = stage_channels(c, STAGES);
    for i in 1..=2 {
        LgfiParams::init(&mut init, &format!("bott{i}.lgfi"), deep, &opts)?;
    }
    for i in 0..STAGES {
        let c_in = stage_channels(c, STAGES - i);
        let c_out = c_in / 2;
        let name = format!("dec{}", i + 1);
        UpParams::init(&mut init, &join(&name, "up"), c_in)?;
        if !config.ablation.no_edff {
            EdffParams::init(&mut init, &join(&name, "edff"), c_out)?;
        }
        LgfiParams::init(&mut init, &join(&name, "lgfi"), c_out, &opts)?;
    }
    init.conv_zeroed("out.conv", 3, c, 3)?;
    Ok(store)
}

/// Re-draws the output conv kernel (He) so gradients reach every layer,
/// e.g. for dead-parameter scans that would otherwise stall at the zero
/// output layer.
pub fn randomize_output<T: Scalar>(store: &mut ParamStore<T>, rng: &mut Rng) -> Result<()> {
    let w = store
        .get_mut("out.conv.w")
        .ok_or_else(|| Error::MissingParam("out.conv.w".into()))?;
    *w = crate::tensor::init_params(w.shape(), InitScheme::He, rng)?;
    Ok(())
}

/// Network parameters resolved on one graph.
#[derive(Clone, Debug)]
pub struct Aminet {
    input_size: usize,
    stem: ConvP,
    encoders: Vec<(LgfiParams, DownParams)>,
    bottleneck: [LgfiParams; 2],
    decoders: Vec<(UpParams, Option<EdffParams>, LgfiParams)>,
    out: ConvP,
}

/// Named intermediate feature shapes of one forward pass: `F0` (stem),
/// `F1`..`F3` (encoders), `F4` (bottleneck), `F5`..`F7` (decoders), `out`.
pub type Trace = Vec<(String, Shape)>;

impl Aminet {
    pub fn bind(bound: &Bound, config: &ArchConfig) -> Result<Self> {
        config.validate()?;
        let opts = config.lgfi_options();
        let pool = config.ablation.skaf_pool;
        let encoders = (1..=STAGES)
            .map(|i| {
                Ok((
                    LgfiParams::bind(bound, &format!("enc{i}.lgfi"), &opts)?,
                    DownParams::bind(bound, &format!("enc{i}.down"))?,
                ))
            })
            .collect::<Result<_>>()?;
        let decoders = (1..=STAGES)
            .map(|i| {
                let edff = if config.ablation.no_edff {
                    None
                } else {
                    Some(EdffParams::bind(bound, &format!("dec{i}.edff"), pool)?)
                };
                Ok((
                    UpParams::bind(bound, &format!("dec{i}.up"))?,
                    edff,
                    LgfiParams::bind(bound, &format!("dec{i}.lgfi"), &opts)?,
                ))
            })
            .collect::<Result<_>>()?;
        Ok(Aminet {
            input_size: config.input_size,
            stem: ConvP::bind(bound, "stem.conv")?,
            encoders,
            bottleneck: [
                LgfiParams::bind(bound, "bott1.lgfi", &opts)?,
                LgfiParams::bind(bound, "bott2.lgfi", &opts)?,
            ],
            decoders,
            out: ConvP::bind(bound, "out.conv")?,
        })
    }

    /// Maps the bicubically pre-upsampled image (N, 3, H, W) to the
    /// unclamped reconstruction of the same shape.
    pub fn forward<T: Scalar>(&self, g: &Graph<T>, x: Var) -> Result<Var> {
        self.run(g, x, None)
    }

    /// Like [`Aminet::forward`], also recording intermediate shapes.
    pub fn forward_traced<T: Scalar>(&self, g: &Graph<T>, x: Var) -> Result<(Var, Trace)> {
        let mut trace = Vec::new();
        let y = self.run(g, x, Some(&mut trace))?;
        Ok((y, trace))
    }

    fn run<T: Scalar>(&self, g: &Graph<T>, x: Var, mut trace: Option<&mut Trace>) -> Result<Var> {
        let s = x.shape();
        if s.c() != 3 || s.h() != self.input_size || s.w() != self.input_size {
            return Err(Error::shape(
                "aminet",
                format!(
                    "input {s} does not match the configured (N, 3, {0}, {0})",
                    self.input_size
                ),
            ));
        }
        let mut record = |name: String, v: Var| {
            if let Some(t) = trace.as_deref_mut() {
                t.push((name, v.shape()));
            }
        };

        let mut f = self.stem.apply(g, x, ConvOptions::same(3))?;
        record("F0".into(), f);
        let mut skips = Vec::with_capacity(STAGES);
        for (i, (lgfi, down)) in self.encoders.iter().enumerate() {
            let e = lgfi_forward(g, f, lgfi)?;
            skips.push(e);
            f = downsample(g, e, down)?;
            record(format!("F{}", i + 1), f);
        }
        for lgfi in &self.bottleneck {
            f = lgfi_forward(g, f, lgfi)?;
        }
        record("F4".into(), f);
        for (i, (up, edff, lgfi)) in self.decoders.iter().enumerate() {
            let u = upsample(g, f, up)?;
            let skip = skips.pop().expect("one skip per stage");
            let fused = match edff {
                Some(p) => edff_forward(g, skip, u, p)?,
                None => g.add(skip, u)?,
            };
            f = lgfi_forward(g, fused, lgfi)?;
            record(format!("F{}", i + 5), f);
        }
        let residual = self.out.apply(g, f, ConvOptions::same(3))?;
        let y = g.add(residual, x)?;
        record("out".into(), y);
        Ok(y)
    }
}

/// Convenience: bind `store` as trainable leaves on `g` and run the forward
/// pass. Returns the bound parameters for gradient collection.
pub fn forward<T: Scalar>(g: &Graph<T>, store: &ParamStore<T>, config: &ArchConfig, x: Var) -> Result<(Var, Bound)> {
    let bound = store.bind(g);
    let net = Aminet::bind(&bound, config)?;
    Ok((net.forward(g, x)?, bound))
}

/// Model size: learnable scalars and the multiply-accumulates of one
/// forward pass on a single image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
pub struct Complexity {
    pub params: usize,
    pub macs: u64,
}

pub fn param_count<T: Scalar>(store: &ParamStore<T>) -> usize {
    store.num_scalars()
}

/// Counts MACs (Σ output elements × kernel volume over convolutions and
/// matmuls) by recording a forward pass on a zero image.
pub fn complexity<T: Scalar>(store: &ParamStore<T>, config: &ArchConfig) -> Result<Complexity> {
    let g = Graph::<T>::new();
    let bound = store.bind_frozen(&g);
    let net = Aminet::bind(&bound, config)?;
    let x = g.constant(crate::Tensor::zeros([1, 3, config.input_size, config.input_size]));
    net.forward(&g, x)?;
    Ok(Complexity {
        params: param_count(store),
        macs: g.macs(),
    })
}
