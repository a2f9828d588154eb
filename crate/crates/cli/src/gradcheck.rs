//! Finite-difference verification of every block and of the whole network
//! on tiny f64 instances.

use std::fmt;
use std::str::FromStr;

use aminet::blocks::{
    edff_forward, lgfi_forward, rdfe_forward, sa_forward, skaf_forward, EdffParams, Initializer, LgfiOptions,
    LgfiParams, RdfeParams, SaParams, SkafParams, SkafPool,
};
use aminet::network::{build, randomize_output, Aminet, ArchConfig, Bound, ParamStore};
use aminet::tensor::{grad_check, GradCheckConfig};
use aminet::{Error, Graph, Result, Rng, Tensor, Var};
use serde::Serialize;

/// Largest accepted relative error.
pub const THRESHOLD: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Block {
    Sa,
    Rdfe,
    Skaf,
    Lgfi,
    Edff,
    Full,
}

impl Block {
    pub const ALL: [Block; 6] = [Block::Sa, Block::Rdfe, Block::Skaf, Block::Lgfi, Block::Edff, Block::Full];

    pub fn name(self) -> &'static str {
        match self {
            Block::Sa => "sa",
            Block::Rdfe => "rdfe",
            Block::Skaf => "skaf",
            Block::Lgfi => "lgfi",
            Block::Edff => "edff",
            Block::Full => "full",
        }
    }
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Block {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Block::ALL.into_iter().find(|b| b.name() == s).ok_or_else(|| {
            let names: Vec<_> = Block::ALL.iter().map(|b| b.name()).collect();
            format!("unknown block `{s}`; expected one of {}", names.join(", "))
        })
    }
}

/// Worst probed coordinate, with the parameter resolved to its name.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Coordinate {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BlockReport {
    pub block: Block,
    pub max_rel_err: f64,
    pub checked: usize,
    pub worst: Option<Coordinate>,
}

impl BlockReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < THRESHOLD
    }
}

type Forward = Box<dyn Fn(&Graph<f64>, &Bound, Var) -> Result<Var>>;

const C: usize = 4;
const HW: usize = 4;

fn store_with(seed: u64, f: impl FnOnce(&mut Initializer<'_, f64>) -> Result<()>) -> Result<(ParamStore<f64>, Rng)> {
    let mut store = ParamStore::new();
    let mut rng = Rng::new(seed);
    f(&mut Initializer::new(&mut store, &mut rng))?;
    // Random values everywhere, so no path is masked by zero biases or
    // unit gains.
    for (_, t) in store.iter_mut() {
        *t = rng.normal_tensor(t.shape(), 0.5);
    }
    Ok((store, rng))
}

/// The instance for `block`: parameters, input, and the forward map.
fn instance(block: Block, seed: u64) -> Result<(ParamStore<f64>, Tensor<f64>, Forward)> {
    let lgfi_opts = LgfiOptions {
        heads: 2,
        reduction: 2,
        ..LgfiOptions::default()
    };
    let (store, mut rng, forward): (_, _, Forward) = match block {
        Block::Sa => {
            let (s, r) = store_with(seed, |i| SaParams::init(i, "sa", C, 2))?;
            (s, r, Box::new(|g, b, x| sa_forward(g, x, &SaParams::bind(b, "sa", 2)?)))
        }
        Block::Rdfe => {
            let (s, r) = store_with(seed, |i| RdfeParams::init(i, "rdfe", C, 2, &RdfeParams::KERNELS))?;
            (
                s,
                r,
                Box::new(|g, b, x| rdfe_forward(g, x, &RdfeParams::bind(b, "rdfe", &RdfeParams::KERNELS)?)),
            )
        }
        Block::Skaf => {
            let (s, r) = store_with(seed, |i| SkafParams::init(i, "skaf", C))?;
            // Both maps weight the input so each enters the scalar loss.
            (
                s,
                r,
                Box::new(|g, b, x| {
                    let (a, c) = skaf_forward(g, x, &SkafParams::bind(b, "skaf", SkafPool::Both)?)?;
                    let a = g.mul(a, x)?;
                    let c = g.mul(c, x)?;
                    g.add(a, c)
                }),
            )
        }
        Block::Lgfi => {
            let (s, r) = store_with(seed, |i| LgfiParams::init(i, "lgfi", C, &lgfi_opts))?;
            (
                s,
                r,
                Box::new(move |g, b, x| lgfi_forward(g, x, &LgfiParams::bind(b, "lgfi", &lgfi_opts)?)),
            )
        }
        Block::Edff => {
            let (s, mut r) = store_with(seed, |i| EdffParams::init(i, "edff", C))?;
            let x_d = r.normal_tensor([1, C, HW, HW], 1.0);
            (
                s,
                r,
                Box::new(move |g, b, x| {
                    edff_forward(g, x, g.constant(x_d.clone()), &EdffParams::bind(b, "edff", SkafPool::Both)?)
                }),
            )
        }
        Block::Full => {
            let arch = full_arch();
            let mut rng = Rng::new(seed);
            let mut s = build::<f64>(&arch, &mut rng)?;
            randomize_output(&mut s, &mut rng)?;
            let x = rng.uniform_tensor([1, 3, arch.input_size, arch.input_size], 0.0, 1.0);
            let fwd: Forward = Box::new(move |g, b, x| Aminet::bind(b, &arch)?.forward(g, x));
            return Ok((s, x, fwd));
        }
    };
    let x = rng.normal_tensor([1, C, HW, HW], 1.0);
    Ok((store, x, forward))
}

/// The network instance checked as `full`.
pub fn full_arch() -> ArchConfig {
    ArchConfig {
        heads: 2,
        au_reduction: 2,
        ..ArchConfig::tiny(C, 16)
    }
}

/// Checks `Σ proj ⊙ block(x)` with respect to every parameter and the input.
pub fn check_block(block: Block, samples: usize, eps: f64, seed: u64) -> Result<BlockReport> {
    let (store, x, forward) = instance(block, seed)?;
    let mut names: Vec<String> = store.names().map(str::to_string).collect();
    let mut params: Vec<Tensor<f64>> = store.iter().map(|(_, t)| t.clone()).collect();
    params.push(x);
    names.push("input".into());

    let out_shape = {
        let g = Graph::new();
        let bound = store.bind_frozen(&g);
        forward(&g, &bound, g.constant(params[params.len() - 1].clone()))?.shape()
    };
    let proj = Rng::derive(seed, 1).normal_tensor(out_shape, 1.0);
    let n_params = names.len() - 1;
    let report = grad_check(
        |g, vars| {
            let bound = Bound::from_vars(names[..n_params].iter().cloned().zip(vars.iter().copied()));
            let y = forward(g, &bound, vars[n_params])?;
            let m = g.mul(y, g.constant(proj.clone()))?;
            g.sum(m)
        },
        &params,
        &GradCheckConfig {
            eps,
            samples,
            seed,
            ..GradCheckConfig::default()
        },
    )?;
    if report.checked == 0 {
        return Err(Error::InvalidArgument(format!("no coordinates probed for {block}")));
    }
    Ok(BlockReport {
        block,
        max_rel_err: report.max_rel_err,
        checked: report.checked,
        worst: report.worst.map(|w| Coordinate {
            param: names[w.param].clone(),
            index: w.index,
            analytic: w.analytic,
            numeric: w.numeric,
        }),
    })
}
