//! Architectural blocks as parameterized forward functions over the tensor
//! engine. Each block has an `init` function that registers its parameters
//! in a [`ParamStore`] under a name prefix, and a params struct that
//! resolves those names to graph variables via [`Bound`].

use crate::error::Result;
use crate::network::{Bound, ParamStore};
use crate::tensor::{init_params, ConvOptions, Graph, InitScheme, Rng, Scalar, Tensor, TransposedConvOptions, Var};

mod edff;
mod lgfi;
mod rdfe;
mod resample;
mod sa;
mod skaf;

pub use edff::{edff_forward, EdffParams};
pub use lgfi::{lgfi_forward, LgfiOptions, LgfiParams, LocalBranch, LocalParams};
pub use rdfe::{ffn_forward, rdfe_forward, rdfe_unit_weights, FfnParams, FrmParams, RdfeParams};
pub use resample::{downsample, upsample, DownParams, UpParams};
pub use sa::{sa_attention_maps, sa_forward, SaParams};
pub use skaf::{skaf_forward, SkafParams, SkafPool};

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Registers block parameters: He-initialized kernels, zero biases, unit
/// norm gains.
pub struct Initializer<'a, T: Scalar> {
    pub store: &'a mut ParamStore<T>,
    pub rng: &'a mut Rng,
}

impl<'a, T: Scalar> Initializer<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, rng: &'a mut Rng) -> Self {
        Initializer { store, rng }
    }

    /// Kernel `name.w` of shape (C_out, C_in/groups, k, k) and bias `name.b`.
    pub fn conv(&mut self, name: &str, c_out: usize, c_in_per_group: usize, k: usize) -> Result<()> {
        let w = init_params([c_out, c_in_per_group, k, k], InitScheme::He, self.rng)?;
        self.store.insert(join(name, "w"), w)?;
        self.store.insert(join(name, "b"), Tensor::zeros([1, 1, 1, c_out]))
    }

    /// Like [`Initializer::conv`] with an all-zero kernel.
    pub fn conv_zeroed(&mut self, name: &str, c_out: usize, c_in_per_group: usize, k: usize) -> Result<()> {
        self.store.insert(join(name, "w"), Tensor::zeros([c_out, c_in_per_group, k, k]))?;
        self.store.insert(join(name, "b"), Tensor::zeros([1, 1, 1, c_out]))
    }

    /// Transposed-convolution kernel of shape (C_in, C_out, k, k) plus bias.
    pub fn conv_transposed(&mut self, name: &str, c_in: usize, c_out: usize, k: usize) -> Result<()> {
        let w = init_params([c_in, c_out, k, k], InitScheme::He, self.rng)?;
        self.store.insert(join(name, "w"), w)?;
        self.store.insert(join(name, "b"), Tensor::zeros([1, 1, 1, c_out]))
    }

    /// Layer-norm gain `name.g` (ones) and shift `name.b` (zeros).
    pub fn norm(&mut self, name: &str, c: usize) -> Result<()> {
        self.store.insert(join(name, "g"), Tensor::ones([1, 1, 1, c]))?;
        self.store.insert(join(name, "b"), Tensor::zeros([1, 1, 1, c]))
    }
}

/// Bound convolution kernel and bias.
#[derive(Clone, Copy, Debug)]
pub struct ConvP {
    pub w: Var,
    pub b: Var,
}

impl ConvP {
    pub fn bind(bound: &Bound, name: &str) -> Result<Self> {
        Ok(ConvP {
            w: bound.get(&join(name, "w"))?,
            b: bound.get(&join(name, "b"))?,
        })
    }

    pub fn apply<T: Scalar>(&self, g: &Graph<T>, x: Var, opts: ConvOptions) -> Result<Var> {
        g.conv2d(x, self.w, Some(self.b), opts)
    }

    pub fn apply_transposed<T: Scalar>(&self, g: &Graph<T>, x: Var, opts: TransposedConvOptions) -> Result<Var> {
        g.conv_transpose2d(x, self.w, Some(self.b), opts)
    }

    /// Spatial size of the (square) kernel.
    pub fn kernel(&self) -> usize {
        self.w.shape().h()
    }
}

/// Bound layer-norm gain and shift.
#[derive(Clone, Copy, Debug)]
pub struct NormP {
    pub g: Var,
    pub b: Var,
}

impl NormP {
    pub fn bind(bound: &Bound, name: &str) -> Result<Self> {
        Ok(NormP {
            g: bound.get(&join(name, "g"))?,
            b: bound.get(&join(name, "b"))?,
        })
    }

    pub fn apply<T: Scalar>(&self, g: &Graph<T>, x: Var) -> Result<Var> {
        g.layer_norm(x, self.g, self.b)
    }
}
