use rand::seq::SliceRandom;
use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Scalar, Shape, Tensor};
use crate::error::{Error, Result};

/// Seeded random stream. The same seed always yields the same values.
#[derive(Clone, Debug)]
pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream derived from `seed` and a stream label; used to
    /// keep e.g. data shuffling and weight init from sharing draws.
    pub fn derive(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Rng { inner }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    pub fn normal_tensor<T: Scalar>(&mut self, shape: impl Into<Shape>, std: f64) -> Tensor<T> {
        let shape = shape.into();
        let data = (0..shape.numel())
            .map(|_| T::of(self.normal() * std))
            .collect();
        Tensor::from_vec(shape, data).expect("length matches shape")
    }

    pub fn uniform_tensor<T: Scalar>(&mut self, shape: impl Into<Shape>, lo: f64, hi: f64) -> Tensor<T> {
        let shape = shape.into();
        let data = (0..shape.numel())
            .map(|_| T::of(self.uniform_in(lo, hi)))
            .collect();
        Tensor::from_vec(shape, data).expect("length matches shape")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitScheme {
    He,
    Xavier,
    Zeros,
}

/// Initializes a kernel of shape (C_out, C_in/groups, kH, kW), or any shape
/// whose first extent is fan-out and remaining extents make up fan-in.
pub fn init_params<T: Scalar>(
    shape: impl Into<Shape>,
    scheme: InitScheme,
    rng: &mut Rng,
) -> Result<Tensor<T>> {
    let shape = shape.into();
    if scheme == InitScheme::Zeros {
        return Ok(Tensor::zeros(shape));
    }
    let fan_out = shape.n();
    let fan_in = shape.c() * shape.h() * shape.w();
    if fan_in == 0 || fan_out == 0 {
        return Err(Error::InvalidArgument(format!(
            "{scheme:?} init needs non-zero fan-in and fan-out, got shape {shape}"
        )));
    }
    let var = match scheme {
        InitScheme::He => 2.0 / fan_in as f64,
        InitScheme::Xavier => 2.0 / (fan_in + fan_out) as f64,
        InitScheme::Zeros => unreachable!(),
    };
    Ok(rng.normal_tensor(shape, var.sqrt()))
}
