//! Multi-head channel self-attention.
//!
//! Q, K and V each come from a 1×1 pointwise conv followed by a 3×3
//! depthwise conv. Per head, the (C_h, HW) query and key matrices form a
//! C_h × C_h attention map `softmax(Q̂·K̂ᵀ/√d)` with `d = HW`, which mixes
//! the value channels. A final 1×1 conv projects the result.

use super::{join, ConvP, Initializer};
use crate::error::{Error, Result};
use crate::network::Bound;
use crate::tensor::{ConvOptions, Graph, Scalar, Var};

#[derive(Clone, Copy, Debug)]
pub struct Projection {
    pub pointwise: ConvP,
    pub depthwise: ConvP,
}

#[derive(Clone, Copy, Debug)]
pub struct SaParams {
    pub q: Projection,
    pub k: Projection,
    pub v: Projection,
    pub out: ConvP,
    pub heads: usize,
}

impl SaParams {
    pub fn init<T: Scalar>(init: &mut Initializer<'_, T>, prefix: &str, channels: usize, heads: usize) -> Result<()> {
        check_heads(channels, heads)?;
        for part in ["q", "k", "v"] {
            init.conv(&join(prefix, &format!("{part}.pw")), channels, channels, 1)?;
            init.conv(&join(prefix, &format!("{part}.dw")), channels, 1, 3)?;
        }
        init.conv(&join(prefix, "out"), channels, channels, 1)
    }

    pub fn bind(bound: &Bound, prefix: &str, heads: usize) -> Result<Self> {
        let proj = |part: &str| -> Result<Projection> {
            Ok(Projection {
                pointwise: ConvP::bind(bound, &join(prefix, &format!("{part}.pw")))?,
                depthwise: ConvP::bind(bound, &join(prefix, &format!("{part}.dw")))?,
            })
        };
        Ok(SaParams {
            q: proj("q")?,
            k: proj("k")?,
            v: proj("v")?,
            out: ConvP::bind(bound, &join(prefix, "out"))?,
            heads,
        })
    }

    pub fn channels(&self) -> usize {
        self.out.w.shape().n()
    }
}

fn check_heads(channels: usize, heads: usize) -> Result<()> {
    if heads == 0 || !channels.is_multiple_of(heads) {
        return Err(Error::Config(format!(
            "{channels} channels not divisible into {heads} heads"
        )));
    }
    Ok(())
}

fn project<T: Scalar>(g: &Graph<T>, x: Var, p: &Projection) -> Result<Var> {
    let c = x.shape().c();
    let y = p.pointwise.apply(g, x, ConvOptions::same(1))?;
    p.depthwise.apply(g, y, ConvOptions::depthwise(3, c))
}

/// Returns the output and the (N, heads, C_h, C_h) attention maps.
fn sa_impl<T: Scalar>(g: &Graph<T>, x: Var, p: &SaParams) -> Result<(Var, Var)> {
    let s = x.shape();
    if s.c() != p.channels() {
        return Err(Error::shape(
            "sa",
            format!("input {s} for a {}-channel block", p.channels()),
        ));
    }
    check_heads(s.c(), p.heads)?;
    let ch = s.c() / p.heads;
    let hw = s.plane();
    let heads_view = [s.n(), p.heads, ch, hw];

    let q = g.reshape(project(g, x, &p.q)?, heads_view)?;
    let k = g.reshape(project(g, x, &p.k)?, heads_view)?;
    let v = g.reshape(project(g, x, &p.v)?, heads_view)?;

    let logits = g.matmul_nt(q, k)?;
    let logits = g.scale(logits, 1.0 / (hw as f64).sqrt())?;
    let attn = g.softmax(logits, 3)?;
    let weighted = g.matmul(attn, v)?;
    let weighted = g.reshape(weighted, s)?;
    let out = p.out.apply(g, weighted, ConvOptions::same(1))?;
    Ok((out, attn))
}

pub fn sa_forward<T: Scalar>(g: &Graph<T>, x: Var, p: &SaParams) -> Result<Var> {
    sa_impl(g, x, p).map(|(out, _)| out)
}

/// Attention maps (N, heads, C_h, C_h) for inspection.
pub fn sa_attention_maps<T: Scalar>(g: &Graph<T>, x: Var, p: &SaParams) -> Result<Var> {
    sa_impl(g, x, p).map(|(_, attn)| attn)
}
