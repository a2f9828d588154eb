//! Attention-guided multi-scale interaction network (AMINet) for face
//! super-resolution, built on a small self-contained tensor engine with
//! reverse-mode differentiation.
//!
//! Layout:
//! - [`tensor`]: NCHW tensors, kernels, the differentiation tape, gradient checking
//! - [`blocks`]: self-attention, RDFE, SKAF, LGFI, EDFF and the resamplers
//! - [`network`]: the full encoder/bottleneck/decoder model, parameters, checkpoints
//! - [`training`]: losses, discriminator, Adam, training loops
//! - [`metrics`]: PSNR and SSIM
//! - [`data`]: PNG I/O, bicubic resampling, synthetic faces, batching

pub mod blocks;
pub mod data;
pub mod error;
pub mod metrics;
pub mod network;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{DType, Graph, Rng, Scalar, Shape, Tensor, Var};
