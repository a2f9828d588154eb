use crate::error::Result;
use crate::network::{Bound, ParamStore};
use crate::tensor::{init_params, ConvOptions, Graph, InitScheme, Rng, Scalar, Tensor, Var};

pub const DISC_LEVELS: usize = 4;

/// Patch discriminator: four stride-2 3×3 convolutions with GELU, widths
/// `base·2^i`, then a 3×3 convolution to a one-channel logit map of 1/16
/// the input size. Parameters are `d.conv{1..4}.{w,b}` and `d.out.{w,b}`.
pub fn build_discriminator<T: Scalar>(base: usize, rng: &mut Rng) -> Result<ParamStore<T>> {
    let mut store = ParamStore::new();
    let mut c_in = 3;
    for i in 0..DISC_LEVELS {
        let c_out = base << i;
        store.insert(
            format!("d.conv{}.w", i + 1),
            init_params([c_out, c_in, 3, 3], InitScheme::He, rng)?,
        )?;
        store.insert(format!("d.conv{}.b", i + 1), Tensor::zeros([1, 1, 1, c_out]))?;
        c_in = c_out;
    }
    store.insert("d.out.w", init_params([1, c_in, 3, 3], InitScheme::He, rng)?)?;
    store.insert("d.out.b", Tensor::zeros([1, 1, 1, 1]))?;
    Ok(store)
}

pub fn disc_forward<T: Scalar>(g: &Graph<T>, bound: &Bound, x: Var) -> Result<Var> {
    let mut f = x;
    for i in 1..=DISC_LEVELS {
        let w = bound.get(&format!("d.conv{i}.w"))?;
        let b = bound.get(&format!("d.conv{i}.b"))?;
        f = g.conv2d(f, w, Some(b), ConvOptions::strided(2, 1))?;
        f = g.gelu(f)?;
    }
    let w = bound.get("d.out.w")?;
    let b = bound.get("d.out.b")?;
    g.conv2d(f, w, Some(b), ConvOptions::same(3))
}
