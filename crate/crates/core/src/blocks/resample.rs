//! Stage resampling: a stride-2 3×3 conv that halves the resolution and
//! doubles the channels, and a stride-2 2×2 transposed conv that does the
//! opposite.

use super::{ConvP, Initializer};
use crate::error::{Error, Result};
use crate::network::Bound;
use crate::tensor::{ConvOptions, Graph, Scalar, TransposedConvOptions, Var};

#[derive(Clone, Copy, Debug)]
pub struct DownParams {
    pub conv: ConvP,
}

impl DownParams {
    pub fn init<T: Scalar>(init: &mut Initializer<'_, T>, prefix: &str, c: usize) -> Result<()> {
        init.conv(prefix, 2 * c, c, 3)
    }

    pub fn bind(bound: &Bound, prefix: &str) -> Result<Self> {
        Ok(DownParams {
            conv: ConvP::bind(bound, prefix)?,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct UpParams {
    pub conv: ConvP,
}

impl UpParams {
    pub fn init<T: Scalar>(init: &mut Initializer<'_, T>, prefix: &str, c: usize) -> Result<()> {
        if !c.is_multiple_of(2) {
            return Err(Error::Config(format!("cannot halve {c} channels")));
        }
        init.conv_transposed(prefix, c, c / 2, 2)
    }

    pub fn bind(bound: &Bound, prefix: &str) -> Result<Self> {
        Ok(UpParams {
            conv: ConvP::bind(bound, prefix)?,
        })
    }
}

/// (N, C, H, W) → (N, 2C, H/2, W/2).
pub fn downsample<T: Scalar>(g: &Graph<T>, x: Var, p: &DownParams) -> Result<Var> {
    let s = x.shape();
    if !s.h().is_multiple_of(2) || !s.w().is_multiple_of(2) {
        return Err(Error::shape("downsample", format!("odd spatial extent in {s}")));
    }
    p.conv.apply(g, x, ConvOptions::strided(2, 1))
}

/// (N, C, H, W) → (N, C/2, 2H, 2W).
pub fn upsample<T: Scalar>(g: &Graph<T>, x: Var, p: &UpParams) -> Result<Var> {
    let s = x.shape();
    if !s.c().is_multiple_of(2) {
        return Err(Error::shape("upsample", format!("odd channel count in {s}")));
    }
    p.conv.apply_transposed(
        g,
        x,
        TransposedConvOptions {
            stride: 2,
            padding: 0,
            output_padding: 0,
        },
    )
}
