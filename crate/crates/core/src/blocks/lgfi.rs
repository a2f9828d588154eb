//! Local and global feature interaction: a shared pre-norm feeds the
//! self-attention (global) and RDFE (local) branches, whose outputs are
//! mixed by SKAF weights on top of an outer residual:
//! `x + x_sa·X′ + x_rd·X″` with `(X′, X″) = skaf(x_sa + x_rd)`.

use serde::{Deserialize, Serialize};

use super::{
    ffn_forward, join, rdfe_forward, sa_forward, skaf_forward, FfnParams, Initializer, NormP, RdfeParams, SaParams,
    SkafParams, SkafPool,
};
use crate::error::{Error, Result};
use crate::network::Bound;
use crate::tensor::{Graph, Scalar, Var};

/// Implementation of the local branch.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalBranch {
    /// Depthwise branches with the listed kernel sizes.
    #[default]
    Rdfe,
    /// A single depthwise branch of the given kernel size.
    SinglePath(usize),
    /// Two 1×1 convs with GELU.
    Ffn,
    /// No local branch.
    Off,
}

impl LocalBranch {
    fn kernels(&self) -> Option<Vec<usize>> {
        match self {
            LocalBranch::Rdfe => Some(RdfeParams::KERNELS.to_vec()),
            LocalBranch::SinglePath(k) => Some(vec![*k]),
            _ => None,
        }
    }
}

/// Structure of one LGFI block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LgfiOptions {
    pub heads: usize,
    pub reduction: usize,
    pub sa: bool,
    pub local: LocalBranch,
    pub skaf: bool,
    pub skaf_pool: SkafPool,
}

impl Default for LgfiOptions {
    fn default() -> Self {
        LgfiOptions {
            heads: 4,
            reduction: 4,
            sa: true,
            local: LocalBranch::Rdfe,
            skaf: true,
            skaf_pool: SkafPool::Both,
        }
    }
}

impl LgfiOptions {
    fn check(&self) -> Result<()> {
        if !self.sa && self.local == LocalBranch::Off {
            return Err(Error::Config("an LGFI block needs at least one branch".into()));
        }
        Ok(())
    }
}

// Built once per block, so the size gap between variants is irrelevant.
#[allow(clippy::large_enum_variant)]
#[derive(Clone, Debug)]
pub enum LocalParams {
    Rdfe(RdfeParams),
    Ffn(FfnParams),
}

#[derive(Clone, Debug)]
pub struct LgfiParams {
    pub norm: NormP,
    pub sa: Option<SaParams>,
    pub local: Option<LocalParams>,
    pub skaf: Option<SkafParams>,
}

impl LgfiParams {
    pub fn init<T: Scalar>(init: &mut Initializer<'_, T>, prefix: &str, c: usize, opts: &LgfiOptions) -> Result<()> {
        opts.check()?;
        init.norm(&join(prefix, "norm"), c)?;
        if opts.sa {
            SaParams::init(init, &join(prefix, "sa"), c, opts.heads)?;
        }
        match &opts.local {
            LocalBranch::Ffn => FfnParams::init(init, &join(prefix, "ffn"), c)?,
            LocalBranch::Off => {}
            other => {
                let kernels = other.kernels().expect("depthwise branch");
                RdfeParams::init(init, &join(prefix, "rdfe"), c, opts.reduction, &kernels)?;
            }
        }
        if opts.skaf {
            SkafParams::init(init, &join(prefix, "skaf"), c)?;
        }
        Ok(())
    }

    pub fn bind(bound: &Bound, prefix: &str, opts: &LgfiOptions) -> Result<Self> {
        opts.check()?;
        let local = match &opts.local {
            LocalBranch::Ffn => Some(LocalParams::Ffn(FfnParams::bind(bound, &join(prefix, "ffn"))?)),
            LocalBranch::Off => None,
            other => {
                let kernels = other.kernels().expect("depthwise branch");
                Some(LocalParams::Rdfe(RdfeParams::bind(bound, &join(prefix, "rdfe"), &kernels)?))
            }
        };
        Ok(LgfiParams {
            norm: NormP::bind(bound, &join(prefix, "norm"))?,
            sa: if opts.sa {
                Some(SaParams::bind(bound, &join(prefix, "sa"), opts.heads)?)
            } else {
                None
            },
            local,
            skaf: if opts.skaf {
                Some(SkafParams::bind(bound, &join(prefix, "skaf"), opts.skaf_pool)?)
            } else {
                None
            },
        })
    }
}

pub fn lgfi_forward<T: Scalar>(g: &Graph<T>, x: Var, p: &LgfiParams) -> Result<Var> {
    let n = p.norm.apply(g, x)?;
    let global = p.sa.as_ref().map(|sa| sa_forward(g, n, sa)).transpose()?;
    let local = match &p.local {
        Some(LocalParams::Rdfe(rd)) => Some(rdfe_forward(g, n, rd)?),
        Some(LocalParams::Ffn(ffn)) => Some(ffn_forward(g, n, ffn)?),
        None => None,
    };

    let weighted = match (global, local) {
        (Some(a), Some(b)) => match &p.skaf {
            Some(skaf) => {
                let mix = g.add(a, b)?;
                let (wa, wb) = skaf_forward(g, mix, skaf)?;
                let a = g.mul(a, wa)?;
                let b = g.mul(b, wb)?;
                g.add(a, b)?
            }
            None => {
                let sum = g.add(a, b)?;
                g.scale(sum, 0.5)?
            }
        },
        // With one branch removed, its weight map is dropped along with it.
        (Some(a), None) => match &p.skaf {
            Some(skaf) => {
                let (wa, _) = skaf_forward(g, a, skaf)?;
                g.mul(a, wa)?
            }
            None => g.scale(a, 0.5)?,
        },
        (None, Some(b)) => match &p.skaf {
            Some(skaf) => {
                let (_, wb) = skaf_forward(g, b, skaf)?;
                g.mul(b, wb)?
            }
            None => g.scale(b, 0.5)?,
        },
        (None, None) => return Err(Error::Config("an LGFI block needs at least one branch".into())),
    };
    g.add(x, weighted)
}
