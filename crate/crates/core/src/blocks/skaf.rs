//! Selective-kernel attention fusion: two spatial weight maps from 5×5 and
//! 7×7 context convolutions pooled across channels.

use serde::{Deserialize, Serialize};

use super::{join, ConvP, Initializer};
use crate::error::{Error, Result};
use crate::network::Bound;
use crate::tensor::{ConvOptions, Graph, PoolKind, Scalar, Var};

/// Channel pooling applied to the context features.
///
/// `Both` pools the concatenated K₅/K₇ features with average and max, one
/// map per pooling kind. The single-kind variants pool each convolution's
/// output separately, one map per kernel.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SkafPool {
    Avg,
    Max,
    #[default]
    Both,
}

impl std::str::FromStr for SkafPool {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "avg" => Ok(SkafPool::Avg),
            "max" => Ok(SkafPool::Max),
            "both" => Ok(SkafPool::Both),
            other => Err(Error::Config(format!("unknown SKAF pooling {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SkafParams {
    pub k5: ConvP,
    pub k7: ConvP,
    pub pool: SkafPool,
}

impl SkafParams {
    pub fn init<T: Scalar>(init: &mut Initializer<'_, T>, prefix: &str, c: usize) -> Result<()> {
        init.conv(&join(prefix, "k5"), c, c, 5)?;
        init.conv(&join(prefix, "k7"), c, c, 7)
    }

    pub fn bind(bound: &Bound, prefix: &str, pool: SkafPool) -> Result<Self> {
        Ok(SkafParams {
            k5: ConvP::bind(bound, &join(prefix, "k5"))?,
            k7: ConvP::bind(bound, &join(prefix, "k7"))?,
            pool,
        })
    }
}

/// Returns the weight maps (X′, X″), each (N, 1, H, W) with values in (0, 1).
pub fn skaf_forward<T: Scalar>(g: &Graph<T>, x: Var, p: &SkafParams) -> Result<(Var, Var)> {
    let c = p.k5.w.shape().n();
    if x.shape().c() != c {
        return Err(Error::shape(
            "skaf",
            format!("input {} for a {c}-channel block", x.shape()),
        ));
    }
    let a = p.k5.apply(g, x, ConvOptions::same(5))?;
    let b = p.k7.apply(g, x, ConvOptions::same(7))?;
    let pooled = match p.pool {
        SkafPool::Both => {
            let both = g.concat_channels(&[a, b])?;
            [
                g.channel_pool(both, PoolKind::Avg)?,
                g.channel_pool(both, PoolKind::Max)?,
            ]
        }
        SkafPool::Avg => [
            g.channel_pool(a, PoolKind::Avg)?,
            g.channel_pool(b, PoolKind::Avg)?,
        ],
        SkafPool::Max => [
            g.channel_pool(a, PoolKind::Max)?,
            g.channel_pool(b, PoolKind::Max)?,
        ],
    };
    let maps = g.concat_channels(&pooled)?;
    let maps = g.sigmoid(maps)?;
    let halves = g.split_channels(maps, &[1, 1])?;
    Ok((halves[0], halves[1]))
}
