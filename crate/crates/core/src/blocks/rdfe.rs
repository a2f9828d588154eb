//! Residual depth feature extraction: parallel depthwise branches
//! modulated by a shared attention unit, merged, and refined by the FRM.

use super::{join, ConvP, Initializer, NormP};
use crate::error::{Error, Result};
use crate::network::Bound;
use crate::tensor::{ConvOptions, Graph, Scalar, TransposedConvOptions, Var};

/// Feature refinement: norm → 3×3 conv → GELU → 3×3 conv → hourglass, with
/// an outer skip. The hourglass is `z + up(gelu(down(z)))` where `down` is a
/// stride-2 3×3 conv and `up` the matching transposed conv.
#[derive(Clone, Copy, Debug)]
pub struct FrmParams {
    pub norm: NormP,
    pub conv1: ConvP,
    pub conv2: ConvP,
    pub down: ConvP,
    pub up: ConvP,
}

impl FrmParams {
    pub fn init<T: Scalar>(init: &mut Initializer<'_, T>, prefix: &str, c: usize) -> Result<()> {
        init.norm(&join(prefix, "norm"), c)?;
        init.conv(&join(prefix, "conv1"), c, c, 3)?;
        init.conv(&join(prefix, "conv2"), c, c, 3)?;
        init.conv(&join(prefix, "down"), c, c, 3)?;
        init.conv_transposed(&join(prefix, "up"), c, c, 3)
    }

    pub fn bind(bound: &Bound, prefix: &str) -> Result<Self> {
        Ok(FrmParams {
            norm: NormP::bind(bound, &join(prefix, "norm"))?,
            conv1: ConvP::bind(bound, &join(prefix, "conv1"))?,
            conv2: ConvP::bind(bound, &join(prefix, "conv2"))?,
            down: ConvP::bind(bound, &join(prefix, "down"))?,
            up: ConvP::bind(bound, &join(prefix, "up"))?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &Graph<T>, x: Var) -> Result<Var> {
        let s = x.shape();
        if s.h() % 2 != s.w() % 2 {
            return Err(Error::shape(
                "frm",
                format!("height and width of {s} differ in parity"),
            ));
        }
        let z = self.norm.apply(g, x)?;
        let z = self.conv1.apply(g, z, ConvOptions::same(3))?;
        let z = g.gelu(z)?;
        let z = self.conv2.apply(g, z, ConvOptions::same(3))?;

        let d = self.down.apply(g, z, ConvOptions::strided(2, 1))?;
        let d = g.gelu(d)?;
        // A stride-2, pad-1 3×3 conv maps H to ⌈H/2⌉; undoing it needs one
        // extra output row exactly when H is even.
        let u = self.up.apply_transposed(
            g,
            d,
            TransposedConvOptions {
                stride: 2,
                padding: 1,
                output_padding: 1 - s.h() % 2,
            },
        )?;
        let hourglass = g.add(z, u)?;
        g.add(x, hourglass)
    }
}

#[derive(Clone, Debug)]
pub struct RdfeParams {
    /// Depthwise branches with their kernel sizes, in ascending order.
    pub branches: Vec<(usize, ConvP)>,
    pub au1: ConvP,
    pub au2: ConvP,
    pub merge: ConvP,
    pub frm: FrmParams,
}

impl RdfeParams {
    pub const KERNELS: [usize; 3] = [3, 5, 7];

    pub fn init<T: Scalar>(
        init: &mut Initializer<'_, T>,
        prefix: &str,
        c: usize,
        reduction: usize,
        kernels: &[usize],
    ) -> Result<()> {
        check(c, reduction, kernels)?;
        for &k in kernels {
            init.conv(&join(prefix, &format!("dw{k}")), c, 1, k)?;
        }
        let wide = c * kernels.len();
        init.conv(&join(prefix, "au1"), c / reduction, wide, 1)?;
        init.conv(&join(prefix, "au2"), c, c / reduction, 1)?;
        init.conv(&join(prefix, "merge"), c, wide, 1)?;
        FrmParams::init(init, &join(prefix, "frm"), c)
    }

    pub fn bind(bound: &Bound, prefix: &str, kernels: &[usize]) -> Result<Self> {
        Ok(RdfeParams {
            branches: kernels
                .iter()
                .map(|&k| Ok((k, ConvP::bind(bound, &join(prefix, &format!("dw{k}")))?)))
                .collect::<Result<_>>()?,
            au1: ConvP::bind(bound, &join(prefix, "au1"))?,
            au2: ConvP::bind(bound, &join(prefix, "au2"))?,
            merge: ConvP::bind(bound, &join(prefix, "merge"))?,
            frm: FrmParams::bind(bound, &join(prefix, "frm"))?,
        })
    }
}

fn check(c: usize, reduction: usize, kernels: &[usize]) -> Result<()> {
    if reduction == 0 || !c.is_multiple_of(reduction) {
        return Err(Error::Config(format!(
            "attention-unit reduction {reduction} does not divide {c} channels"
        )));
    }
    if kernels.is_empty() || kernels.iter().any(|k| k % 2 == 0) {
        return Err(Error::Config(format!(
            "depthwise kernels must be odd and non-empty, got {kernels:?}"
        )));
    }
    Ok(())
}

/// Attention-unit weights `sigmoid(A₂(gelu(A₁(concat(f₁..f_k)))))`, shared
/// by every branch.
fn attention_unit<T: Scalar>(g: &Graph<T>, feats: &[Var], p: &RdfeParams) -> Result<Var> {
    let cat = if feats.len() == 1 {
        feats[0]
    } else {
        g.concat_channels(feats)?
    };
    let a = p.au1.apply(g, cat, ConvOptions::same(1))?;
    let a = g.gelu(a)?;
    let a = p.au2.apply(g, a, ConvOptions::same(1))?;
    g.sigmoid(a)
}

fn branch_features<T: Scalar>(g: &Graph<T>, x: Var, p: &RdfeParams) -> Result<Vec<Var>> {
    let c = x.shape().c();
    if p.merge.w.shape().n() != c {
        return Err(Error::shape(
            "rdfe",
            format!("input {} for a {}-channel block", x.shape(), p.merge.w.shape().n()),
        ));
    }
    p.branches
        .iter()
        .map(|(k, conv)| conv.apply(g, x, ConvOptions::depthwise(*k, c)))
        .collect()
}

/// The attention-unit weights f′ alone, for inspection.
pub fn rdfe_unit_weights<T: Scalar>(g: &Graph<T>, x: Var, p: &RdfeParams) -> Result<Var> {
    let feats = branch_features(g, x, p)?;
    attention_unit(g, &feats, p)
}

pub fn rdfe_forward<T: Scalar>(g: &Graph<T>, x: Var, p: &RdfeParams) -> Result<Var> {
    let feats = branch_features(g, x, p)?;
    let weight = attention_unit(g, &feats, p)?;
    let modulated = feats
        .iter()
        .map(|&f| g.mul(f, weight))
        .collect::<Result<Vec<_>>>()?;
    let cat = if modulated.len() == 1 {
        modulated[0]
    } else {
        g.concat_channels(&modulated)?
    };
    let merged = p.merge.apply(g, cat, ConvOptions::same(1))?;
    let f2 = g.add(merged, x)?;
    p.frm.forward(g, f2)
}

/// Two 1×1 convs with GELU between at width C, plus a skip: the plain
/// feed-forward stand-in for RDFE.
#[derive(Clone, Copy, Debug)]
pub struct FfnParams {
    pub fc1: ConvP,
    pub fc2: ConvP,
}

impl FfnParams {
    pub fn init<T: Scalar>(init: &mut Initializer<'_, T>, prefix: &str, c: usize) -> Result<()> {
        init.conv(&join(prefix, "fc1"), c, c, 1)?;
        init.conv(&join(prefix, "fc2"), c, c, 1)
    }

    pub fn bind(bound: &Bound, prefix: &str) -> Result<Self> {
        Ok(FfnParams {
            fc1: ConvP::bind(bound, &join(prefix, "fc1"))?,
            fc2: ConvP::bind(bound, &join(prefix, "fc2"))?,
        })
    }
}

pub fn ffn_forward<T: Scalar>(g: &Graph<T>, x: Var, p: &FfnParams) -> Result<Var> {
    let h = p.fc1.apply(g, x, ConvOptions::same(1))?;
    let h = g.gelu(h)?;
    let h = p.fc2.apply(g, h, ConvOptions::same(1))?;
    g.add(x, h)
}
