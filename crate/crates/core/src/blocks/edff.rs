//! Encoder–decoder feature fusion: SKAF weights over the reduced
//! concatenation select between the skip and decoder features.

use super::{join, skaf_forward, ConvP, Initializer, SkafParams, SkafPool};
use crate::error::{Error, Result};
use crate::network::Bound;
use crate::tensor::{ConvOptions, Graph, Scalar, Var};

#[derive(Clone, Copy, Debug)]
pub struct EdffParams {
    pub reduce: ConvP,
    pub skaf: SkafParams,
}

impl EdffParams {
    pub fn init<T: Scalar>(init: &mut Initializer<'_, T>, prefix: &str, c: usize) -> Result<()> {
        init.conv(&join(prefix, "reduce"), c, 2 * c, 1)?;
        SkafParams::init(init, &join(prefix, "skaf"), c)
    }

    pub fn bind(bound: &Bound, prefix: &str, pool: SkafPool) -> Result<Self> {
        Ok(EdffParams {
            reduce: ConvP::bind(bound, &join(prefix, "reduce"))?,
            skaf: SkafParams::bind(bound, &join(prefix, "skaf"), pool)?,
        })
    }
}

/// `x_e·X′ + x_d·X″` with `(X′, X″) = skaf(R(concat(x_e, x_d)))`.
pub fn edff_forward<T: Scalar>(g: &Graph<T>, x_e: Var, x_d: Var, p: &EdffParams) -> Result<Var> {
    if x_e.shape() != x_d.shape() {
        return Err(Error::shape(
            "edff",
            format!("encoder feature {} vs decoder feature {}", x_e.shape(), x_d.shape()),
        ));
    }
    let cat = g.concat_channels(&[x_e, x_d])?;
    let reduced = p.reduce.apply(g, cat, ConvOptions::same(1))?;
    let (w_e, w_d) = skaf_forward(g, reduced, &p.skaf)?;
    let a = g.mul(x_e, w_e)?;
    let b = g.mul(x_d, w_d)?;
    g.add(a, b)
}
