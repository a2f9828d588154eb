//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s in execution
//! order. [`Graph::backward`] replays the record in reverse once, producing
//! gradients for every leaf created with [`Graph::leaf`].

use std::cell::{Cell, Ref, RefCell};
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU8, Ordering};

use super::kernels::{self, ConvGeom};
use super::{Scalar, Shape, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    id: usize,
    shape: Shape,
}

impl Var {
    pub fn id(&self) -> usize {
        self.id
    }
    pub fn shape(&self) -> Shape {
        self.shape
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConvOptions {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvOptions {
    /// Stride 1 with "same" zero padding for an odd kernel size `k`.
    pub fn same(k: usize) -> Self {
        ConvOptions {
            stride: 1,
            padding: k / 2,
            groups: 1,
        }
    }

    pub fn depthwise(k: usize, channels: usize) -> Self {
        ConvOptions {
            groups: channels,
            ..Self::same(k)
        }
    }

    pub fn strided(stride: usize, padding: usize) -> Self {
        ConvOptions {
            stride,
            padding,
            groups: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TransposedConvOptions {
    pub stride: usize,
    pub padding: usize,
    pub output_padding: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PoolKind {
    Avg,
    Max,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ReduceKind {
    Sum,
    Mean,
    MeanAbs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum UnaryOp {
    Sigmoid,
    Gelu,
}

/// Coarse operation kinds, used for tape census and adjoint fault injection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpKind {
    Conv2d,
    ConvTranspose2d,
    MatMul,
    Softmax,
    LayerNorm,
    ChannelPool,
    Concat,
    Split,
    Reshape,
    Permute,
    Add,
    Sub,
    Mul,
    Sigmoid,
    Gelu,
    Scale,
    Reduce,
    SampleMean,
    Bce,
}

impl OpKind {
    pub const ALL: [OpKind; 19] = [
        OpKind::Conv2d,
        OpKind::ConvTranspose2d,
        OpKind::MatMul,
        OpKind::Softmax,
        OpKind::LayerNorm,
        OpKind::ChannelPool,
        OpKind::Concat,
        OpKind::Split,
        OpKind::Reshape,
        OpKind::Permute,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Sigmoid,
        OpKind::Gelu,
        OpKind::Scale,
        OpKind::Reduce,
        OpKind::SampleMean,
        OpKind::Bce,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Conv2d => "conv2d",
            OpKind::ConvTranspose2d => "conv_transpose2d",
            OpKind::MatMul => "matmul",
            OpKind::Softmax => "softmax",
            OpKind::LayerNorm => "layer_norm",
            OpKind::ChannelPool => "channel_pool",
            OpKind::Concat => "concat",
            OpKind::Split => "split",
            OpKind::Reshape => "reshape",
            OpKind::Permute => "permute",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Gelu => "gelu",
            OpKind::Scale => "scale",
            OpKind::Reduce => "reduce",
            OpKind::SampleMean => "sample_mean",
            OpKind::Bce => "bce",
        }
    }

    fn code(self) -> u8 {
        OpKind::ALL.iter().position(|&k| k == self).unwrap() as u8 + 1
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OpKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown op `{s}`")))
    }
}

static ADJOINT_FAULT: AtomicU8 = AtomicU8::new(0);

/// Test hook: makes the adjoint of `kind` return a wrong (scaled) gradient,
/// so the gradient checker can be shown to catch it. `None` clears it.
pub fn set_adjoint_fault(kind: Option<OpKind>) {
    ADJOINT_FAULT.store(kind.map_or(0, OpKind::code), Ordering::SeqCst);
}

fn fault_active(kind: OpKind) -> bool {
    ADJOINT_FAULT.load(Ordering::Relaxed) == kind.code()
}

enum Op<T> {
    Leaf,
    Conv2d {
        x: usize,
        w: usize,
        b: Option<usize>,
        geom: ConvGeom,
    },
    /// `geom` describes the adjoint convolution (output → input).
    ConvTranspose2d {
        x: usize,
        w: usize,
        b: Option<usize>,
        geom: ConvGeom,
    },
    MatMul {
        a: usize,
        b: usize,
        trans_b: bool,
        dims: (usize, usize, usize, usize),
    },
    Softmax {
        x: usize,
        axis: usize,
    },
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        means: Vec<T>,
        rstds: Vec<T>,
    },
    ChannelPool {
        x: usize,
        kind: PoolKind,
        argmax: Vec<u32>,
    },
    Concat {
        xs: Vec<usize>,
    },
    Narrow {
        x: usize,
        start: usize,
    },
    Reshape {
        x: usize,
    },
    Permute {
        x: usize,
        perm: [usize; 4],
    },
    Binary {
        kind: BinaryOp,
        a: usize,
        b: usize,
    },
    Unary {
        kind: UnaryOp,
        x: usize,
    },
    Scale {
        x: usize,
        c: T,
    },
    Reduce {
        kind: ReduceKind,
        x: usize,
    },
    SampleMean {
        x: usize,
    },
    Bce {
        x: usize,
        target: T,
    },
}

impl<T> Op<T> {
    fn kind(&self) -> Option<OpKind> {
        Some(match self {
            Op::Leaf => return None,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::ConvTranspose2d { .. } => OpKind::ConvTranspose2d,
            Op::MatMul { .. } => OpKind::MatMul,
            Op::Softmax { .. } => OpKind::Softmax,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::ChannelPool { .. } => OpKind::ChannelPool,
            Op::Concat { .. } => OpKind::Concat,
            Op::Narrow { .. } => OpKind::Split,
            Op::Reshape { .. } => OpKind::Reshape,
            Op::Permute { .. } => OpKind::Permute,
            Op::Binary { kind, .. } => match kind {
                BinaryOp::Add => OpKind::Add,
                BinaryOp::Sub => OpKind::Sub,
                BinaryOp::Mul => OpKind::Mul,
            },
            Op::Unary { kind, .. } => match kind {
                UnaryOp::Sigmoid => OpKind::Sigmoid,
                UnaryOp::Gelu => OpKind::Gelu,
            },
            Op::Scale { .. } => OpKind::Scale,
            Op::Reduce { .. } => OpKind::Reduce,
            Op::SampleMean { .. } => OpKind::SampleMean,
            Op::Bce { .. } => OpKind::Bce,
        })
    }

    /// Fine-grained label for census output.
    fn label(&self) -> &'static str {
        match self {
            Op::ChannelPool {
                kind: PoolKind::Avg,
                ..
            } => "channel_pool.avg",
            Op::ChannelPool {
                kind: PoolKind::Max,
                ..
            } => "channel_pool.max",
            Op::Conv2d { geom, .. } if geom.groups > 1 => "conv2d.grouped",
            other => other.kind().map_or("leaf", OpKind::name),
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recorded computation. Single-threaded; one backward pass per graph.
pub struct Graph<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
    consumed: Cell<bool>,
    macs: Cell<u64>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
            consumed: Cell::new(false),
            macs: Cell::new(0),
        }
    }

    /// Differentiable input.
    pub fn leaf(&self, value: Tensor<T>) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// Input that receives no gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    /// Copy of `x` that blocks gradient flow.
    pub fn detach(&self, x: Var) -> Var {
        let value = self.value(x).clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor<T>> {
        Ref::map(self.nodes.borrow(), |n| &n[v.id].value)
    }

    /// Owned copy of a recorded value.
    pub fn tensor(&self, v: Var) -> Tensor<T> {
        self.value(v).clone()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Multiply-accumulate count of every convolution and matmul recorded.
    pub fn macs(&self) -> u64 {
        self.macs.get()
    }

    /// Number of recorded operations per label.
    pub fn census(&self) -> BTreeMap<&'static str, usize> {
        let mut out = BTreeMap::new();
        for node in self.nodes.borrow().iter() {
            *out.entry(node.op.label()).or_insert(0) += 1;
        }
        out
    }

    fn push_raw(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        let shape = value.shape();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var { id, shape }
    }

    fn push(&self, name: &'static str, value: Tensor<T>, op: Op<T>, inputs: &[usize]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|&i| nodes[i].requires_grad)
        };
        Ok(self.push_raw(value, op, requires_grad))
    }

    // ---- convolution ----------------------------------------------------

    /// Cross-correlation with zero padding. `w` has shape
    /// (C_out, C_in/groups, k, k); `b` has C_out elements.
    pub fn conv2d(&self, x: Var, w: Var, b: Option<Var>, opts: ConvOptions) -> Result<Var> {
        let (xs, ws) = (x.shape, w.shape);
        let groups = opts.groups.max(1);
        let stride = opts.stride.max(1);
        if xs.c() % groups != 0 || ws.n() % groups != 0 {
            return Err(Error::shape(
                "conv2d",
                format!("groups {groups} must divide C_in {} and C_out {}", xs.c(), ws.n()),
            ));
        }
        if ws.c() != xs.c() / groups {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {ws} does not match input {xs} with {groups} groups"),
            ));
        }
        if let Some(b) = b {
            if b.shape.numel() != ws.n() {
                return Err(Error::shape("conv2d", format!("bias {} for {} outputs", b.shape, ws.n())));
            }
        }
        let (hp, wp) = (xs.h() + 2 * opts.padding, xs.w() + 2 * opts.padding);
        if hp < ws.h() || wp < ws.w() {
            return Err(Error::shape("conv2d", format!("kernel {ws} larger than padded input {xs}")));
        }
        let ho = (hp - ws.h()) / stride + 1;
        let wo = (wp - ws.w()) / stride + 1;
        let geom = ConvGeom::new(xs, ws, stride, opts.padding, groups, ho, wo);
        let mut out = vec![T::zero(); xs.n() * ws.n() * ho * wo];
        {
            let nodes = self.nodes.borrow();
            let bias = b.map(|b| nodes[b.id].value.data());
            kernels::conv2d_forward(nodes[x.id].value.data(), nodes[w.id].value.data(), bias, &geom, &mut out);
        }
        self.macs.set(self.macs.get() + geom.macs());
        let value = Tensor::from_vec([xs.n(), ws.n(), ho, wo], out)?;
        let mut inputs = vec![x.id, w.id];
        inputs.extend(b.map(|b| b.id));
        self.push(
            "conv2d",
            value,
            Op::Conv2d {
                x: x.id,
                w: w.id,
                b: b.map(|b| b.id),
                geom,
            },
            &inputs,
        )
    }

    /// Transposed convolution (the adjoint of a strided convolution).
    /// `w` has shape (C_in, C_out, k, k); output extent is
    /// `(H-1)·stride − 2·padding + k + output_padding`.
    pub fn conv_transpose2d(&self, x: Var, w: Var, b: Option<Var>, opts: TransposedConvOptions) -> Result<Var> {
        let (xs, ws) = (x.shape, w.shape);
        let stride = opts.stride.max(1);
        if ws.n() != xs.c() {
            return Err(Error::shape(
                "conv_transpose2d",
                format!("kernel {ws} expects {} input channels, got {xs}", ws.n()),
            ));
        }
        if opts.output_padding >= stride {
            return Err(Error::InvalidArgument("output_padding must be smaller than stride".into()));
        }
        if let Some(b) = b {
            if b.shape.numel() != ws.c() {
                return Err(Error::shape("conv_transpose2d", format!("bias {} for {} outputs", b.shape, ws.c())));
            }
        }
        let extent = |len: usize, k: usize| -> Result<usize> {
            ((len - 1) * stride + k + opts.output_padding)
                .checked_sub(2 * opts.padding)
                .filter(|&v| v > 0)
                .ok_or_else(|| Error::shape("conv_transpose2d", "padding too large for input"))
        };
        let ho = extent(xs.h(), ws.h())?;
        let wo = extent(xs.w(), ws.w())?;
        let out_shape = Shape::new(xs.n(), ws.c(), ho, wo);
        // The adjoint convolution maps out_shape -> xs with kernel (C_in, C_out, k, k).
        let geom = ConvGeom::new(out_shape, ws, stride, opts.padding, 1, xs.h(), xs.w());
        let mut out = vec![T::zero(); out_shape.numel()];
        {
            let nodes = self.nodes.borrow();
            kernels::conv2d_backward_input(nodes[x.id].value.data(), nodes[w.id].value.data(), &geom, &mut out);
            if let Some(b) = b {
                let bias = nodes[b.id].value.data();
                for (i, chunk) in out.chunks_mut(ho * wo).enumerate() {
                    let bv = bias[i % ws.c()];
                    chunk.iter_mut().for_each(|v| *v = *v + bv);
                }
            }
        }
        self.macs.set(self.macs.get() + geom.macs());
        let mut inputs = vec![x.id, w.id];
        inputs.extend(b.map(|b| b.id));
        self.push(
            "conv_transpose2d",
            Tensor::from_vec(out_shape, out)?,
            Op::ConvTranspose2d {
                x: x.id,
                w: w.id,
                b: b.map(|b| b.id),
                geom,
            },
            &inputs,
        )
    }

    // ---- matrix products ------------------------------------------------

    /// Batched product over the trailing two axes: (N, B, M, K) · (N, B, K, P).
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// Batched `a · bᵀ` over the trailing two axes: (N, B, M, K) · (N, B, P, K)ᵀ.
    pub fn matmul_nt(&self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (a.shape, b.shape);
        let (kb, p) = if trans_b { (sb.w(), sb.h()) } else { (sb.h(), sb.w()) };
        if sa.0[..2] != sb.0[..2] || sa.w() != kb {
            return Err(Error::shape("matmul", format!("{sa} x {sb} (transposed rhs: {trans_b})")));
        }
        let batch = sa.n() * sa.c();
        let (m, k) = (sa.h(), sa.w());
        let mut out = vec![T::zero(); batch * m * p];
        {
            let nodes = self.nodes.borrow();
            kernels::batched_matmul(
                nodes[a.id].value.data(),
                nodes[b.id].value.data(),
                &mut out,
                batch,
                m,
                k,
                p,
                false,
                trans_b,
                false,
            );
        }
        self.macs.set(self.macs.get() + (batch * m * k * p) as u64);
        self.push(
            "matmul",
            Tensor::from_vec([sa.n(), sa.c(), m, p], out)?,
            Op::MatMul {
                a: a.id,
                b: b.id,
                trans_b,
                dims: (batch, m, k, p),
            },
            &[a.id, b.id],
        )
    }

    // ---- normalization and pooling --------------------------------------

    pub fn softmax(&self, x: Var, axis: usize) -> Result<Var> {
        if axis > 3 {
            return Err(Error::InvalidArgument(format!("softmax axis {axis} out of range")));
        }
        let mut out = vec![T::zero(); x.shape.numel()];
        kernels::softmax(self.value(x).data(), x.shape, axis, &mut out);
        self.push(
            "softmax",
            Tensor::from_vec(x.shape, out)?,
            Op::Softmax { x: x.id, axis },
            &[x.id],
        )
    }

    /// Normalizes across channels at each spatial position, then applies a
    /// per-channel affine map.
    pub fn layer_norm(&self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let c = x.shape.c();
        if gamma.shape.numel() != c || beta.shape.numel() != c {
            return Err(Error::shape(
                "layer_norm",
                format!("gamma {} / beta {} for {c} channels", gamma.shape, beta.shape),
            ));
        }
        let mut out = vec![T::zero(); x.shape.numel()];
        let (means, rstds) = {
            let nodes = self.nodes.borrow();
            kernels::layer_norm(
                nodes[x.id].value.data(),
                x.shape,
                nodes[gamma.id].value.data(),
                nodes[beta.id].value.data(),
                &mut out,
            )
        };
        self.push(
            "layer_norm",
            Tensor::from_vec(x.shape, out)?,
            Op::LayerNorm {
                x: x.id,
                gamma: gamma.id,
                beta: beta.id,
                means,
                rstds,
            },
            &[x.id, gamma.id, beta.id],
        )
    }

    /// Per-pixel mean or max across channels: (N, C, H, W) -> (N, 1, H, W).
    pub fn channel_pool(&self, x: Var, kind: PoolKind) -> Result<Var> {
        let s = x.shape;
        if s.c() == 0 {
            return Err(Error::shape("channel_pool", "zero channels"));
        }
        let plane = s.plane();
        let mut out = vec![T::zero(); s.n() * plane];
        let mut argmax = Vec::new();
        {
            let v = self.value(x);
            let data = v.data();
            match kind {
                PoolKind::Avg => {
                    let inv = T::of(1.0 / s.c() as f64);
                    for n in 0..s.n() {
                        let o = &mut out[n * plane..(n + 1) * plane];
                        for c in 0..s.c() {
                            let src = &data[(n * s.c() + c) * plane..(n * s.c() + c + 1) * plane];
                            for (d, &v) in o.iter_mut().zip(src) {
                                *d = *d + v;
                            }
                        }
                        o.iter_mut().for_each(|d| *d = *d * inv);
                    }
                }
                PoolKind::Max => {
                    argmax = vec![0u32; s.n() * plane];
                    for n in 0..s.n() {
                        let o = &mut out[n * plane..(n + 1) * plane];
                        let am = &mut argmax[n * plane..(n + 1) * plane];
                        o.copy_from_slice(&data[n * s.c() * plane..(n * s.c() + 1) * plane]);
                        for c in 1..s.c() {
                            let src = &data[(n * s.c() + c) * plane..(n * s.c() + c + 1) * plane];
                            for p in 0..plane {
                                if src[p] > o[p] {
                                    o[p] = src[p];
                                    am[p] = c as u32;
                                }
                            }
                        }
                    }
                }
            }
        }
        self.push(
            "channel_pool",
            Tensor::from_vec(s.with_c(1), out)?,
            Op::ChannelPool {
                x: x.id,
                kind,
                argmax,
            },
            &[x.id],
        )
    }

    // ---- data movement --------------------------------------------------

    pub fn concat_channels(&self, xs: &[Var]) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
        let s = first.shape;
        for v in xs {
            if v.shape.n() != s.n() || v.shape.h() != s.h() || v.shape.w() != s.w() {
                return Err(Error::shape("concat", format!("{} vs {}", v.shape, s)));
            }
        }
        let total_c: usize = xs.iter().map(|v| v.shape.c()).sum();
        let plane = s.plane();
        let mut out = Vec::with_capacity(s.n() * total_c * plane);
        {
            let nodes = self.nodes.borrow();
            for n in 0..s.n() {
                for v in xs {
                    let per = v.shape.c() * plane;
                    out.extend_from_slice(&nodes[v.id].value.data()[n * per..(n + 1) * per]);
                }
            }
        }
        let ids: Vec<usize> = xs.iter().map(|v| v.id).collect();
        self.push(
            "concat",
            Tensor::from_vec(s.with_c(total_c), out)?,
            Op::Concat { xs: ids.clone() },
            &ids,
        )
    }

    /// Splits along channels into consecutive pieces of the given sizes.
    pub fn split_channels(&self, x: Var, sizes: &[usize]) -> Result<Vec<Var>> {
        if sizes.iter().sum::<usize>() != x.shape.c() {
            return Err(Error::shape("split", format!("sizes {sizes:?} for {}", x.shape)));
        }
        let mut start = 0;
        let mut outs = Vec::with_capacity(sizes.len());
        for &len in sizes {
            outs.push(self.narrow(x, start, len)?);
            start += len;
        }
        Ok(outs)
    }

    fn narrow(&self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = x.shape;
        let plane = s.plane();
        let mut out = Vec::with_capacity(s.n() * len * plane);
        {
            let v = self.value(x);
            for n in 0..s.n() {
                let base = (n * s.c() + start) * plane;
                out.extend_from_slice(&v.data()[base..base + len * plane]);
            }
        }
        self.push(
            "split",
            Tensor::from_vec(s.with_c(len), out)?,
            Op::Narrow { x: x.id, start },
            &[x.id],
        )
    }

    pub fn reshape(&self, x: Var, shape: impl Into<Shape>) -> Result<Var> {
        let value = self.tensor(x).reshape(shape)?;
        self.push("reshape", value, Op::Reshape { x: x.id }, &[x.id])
    }

    /// Output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, x: Var, perm: [usize; 4]) -> Result<Var> {
        let mut sorted = perm;
        sorted.sort_unstable();
        if sorted != [0, 1, 2, 3] {
            return Err(Error::InvalidArgument(format!("{perm:?} is not a permutation")));
        }
        let mut out = vec![T::zero(); x.shape.numel()];
        let shape = kernels::permute(self.value(x).data(), x.shape, perm, &mut out);
        self.push(
            "permute",
            Tensor::from_vec(shape, out)?,
            Op::Permute { x: x.id, perm },
            &[x.id],
        )
    }

    // ---- elementwise ----------------------------------------------------

    /// Elementwise binary op. Shapes must match, or one operand may have a
    /// single channel, which is broadcast across the other's channels.
    pub fn binary(&self, kind: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let out_shape = broadcast_shape(a.shape, b.shape)?;
        let mut out = vec![T::zero(); out_shape.numel()];
        {
            let nodes = self.nodes.borrow();
            let (av, bv) = (nodes[a.id].value.data(), nodes[b.id].value.data());
            let f = |x: T, y: T| match kind {
                BinaryOp::Add => x + y,
                BinaryOp::Sub => x - y,
                BinaryOp::Mul => x * y,
            };
            if a.shape == b.shape {
                for ((o, &x), &y) in out.iter_mut().zip(av).zip(bv) {
                    *o = f(x, y);
                }
            } else {
                let plane = out_shape.plane();
                let c = out_shape.c();
                for (i, o) in out.iter_mut().enumerate() {
                    let (n, p) = (i / (c * plane), i % plane);
                    let ia = if a.shape.c() == 1 { n * plane + p } else { i };
                    let ib = if b.shape.c() == 1 { n * plane + p } else { i };
                    *o = f(av[ia], bv[ib]);
                }
            }
        }
        let name = match kind {
            BinaryOp::Add => "add",
            BinaryOp::Sub => "sub",
            BinaryOp::Mul => "mul",
        };
        self.push(
            name,
            Tensor::from_vec(out_shape, out)?,
            Op::Binary {
                kind,
                a: a.id,
                b: b.id,
            },
            &[a.id, b.id],
        )
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn unary(&self, kind: UnaryOp, x: Var) -> Result<Var> {
        let value = {
            let v = self.value(x);
            match kind {
                UnaryOp::Sigmoid => v.map(kernels::sigmoid),
                UnaryOp::Gelu => v.map(kernels::gelu),
            }
        };
        let name = match kind {
            UnaryOp::Sigmoid => "sigmoid",
            UnaryOp::Gelu => "gelu",
        };
        self.push(name, value, Op::Unary { kind, x: x.id }, &[x.id])
    }

    pub fn sigmoid(&self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Sigmoid, x)
    }

    pub fn gelu(&self, x: Var) -> Result<Var> {
        self.unary(UnaryOp::Gelu, x)
    }

    /// Multiplies by a constant.
    pub fn scale(&self, x: Var, c: f64) -> Result<Var> {
        let c = T::of(c);
        let value = self.value(x).map(|v| v * c);
        self.push("scale", value, Op::Scale { x: x.id, c }, &[x.id])
    }

    // ---- reductions -----------------------------------------------------

    /// Full reduction to a (1, 1, 1, 1) tensor, accumulated in f64 in
    /// storage order.
    pub fn reduce(&self, kind: ReduceKind, x: Var) -> Result<Var> {
        let value = {
            let v = self.value(x);
            let d = v.data();
            let n = d.len().max(1) as f64;
            match kind {
                ReduceKind::Sum => d.iter().map(|v| v.as_f64()).sum::<f64>(),
                ReduceKind::Mean => d.iter().map(|v| v.as_f64()).sum::<f64>() / n,
                ReduceKind::MeanAbs => d.iter().map(|v| v.as_f64().abs()).sum::<f64>() / n,
            }
        };
        self.push(
            "reduce",
            Tensor::scalar(T::of(value)),
            Op::Reduce { kind, x: x.id },
            &[x.id],
        )
    }

    pub fn sum(&self, x: Var) -> Result<Var> {
        self.reduce(ReduceKind::Sum, x)
    }

    pub fn mean(&self, x: Var) -> Result<Var> {
        self.reduce(ReduceKind::Mean, x)
    }

    pub fn mean_abs(&self, x: Var) -> Result<Var> {
        self.reduce(ReduceKind::MeanAbs, x)
    }

    /// Mean over (C, H, W) of each sample: (N, C, H, W) -> (N, 1, 1, 1).
    pub fn sample_mean(&self, x: Var) -> Result<Var> {
        let n = x.shape.n();
        let per = x.shape.numel() / n.max(1);
        let out: Vec<T> = {
            let v = self.value(x);
            v.data()
                .chunks(per.max(1))
                .map(|c| T::of(c.iter().map(|v| v.as_f64()).sum::<f64>() / per as f64))
                .collect()
        };
        self.push(
            "sample_mean",
            Tensor::from_vec([n, 1, 1, 1], out)?,
            Op::SampleMean { x: x.id },
            &[x.id],
        )
    }

    /// Elementwise binary cross-entropy of `sigmoid(x)` against a constant
    /// target, with the probability clamped to `[1e-7, 1 − 1e-7]`.
    pub fn bce_with_logits(&self, x: Var, target: f64) -> Result<Var> {
        let t = T::of(target);
        let value = self.value(x).map(|z| {
            let p = clamp_prob(kernels::sigmoid(z));
            -(t * p.ln() + (T::one() - t) * (T::one() - p).ln())
        });
        self.push("bce", value, Op::Bce { x: x.id, target: t }, &[x.id])
    }

    // ---- backward -------------------------------------------------------

    /// Reverse pass from a scalar `loss`. The tape can be replayed only once.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if !loss.shape.is_scalar() {
            return Err(Error::NonScalarLoss(loss.shape));
        }
        if self.consumed.replace(true) {
            return Err(Error::StaleTape);
        }
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(vec![T::one()]);
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                grads[id] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(dy) = grads[id].take() else {
                continue;
            };
            let contributions = backward_op(&nodes, node, &dy)?;
            let corrupt = node.op.kind().is_some_and(fault_active);
            for (input, mut g) in contributions {
                if !nodes[input].requires_grad {
                    continue;
                }
                if corrupt {
                    g.iter_mut().for_each(|v| *v = *v * T::of(1.5));
                }
                match &mut grads[input] {
                    Some(acc) => {
                        for (a, v) in acc.iter_mut().zip(g) {
                            *a = *a + v;
                        }
                    }
                    slot @ None => *slot = Some(g),
                }
            }
        }
        let mut leaf_grads = Vec::with_capacity(nodes.len());
        for (id, node) in nodes.iter().enumerate() {
            let g = if matches!(node.op, Op::Leaf) && node.requires_grad {
                let data = grads[id]
                    .take()
                    .unwrap_or_else(|| vec![T::zero(); node.value.numel()]);
                Some(Tensor::from_vec(node.value.shape(), data)?)
            } else {
                None
            };
            leaf_grads.push(g);
        }
        Ok(Gradients { grads: leaf_grads })
    }
}

#[inline]
fn clamp_prob<T: Scalar>(p: T) -> T {
    let lo = T::of(1e-7);
    let hi = T::one() - lo;
    p.max(lo).min(hi)
}

fn broadcast_shape(a: Shape, b: Shape) -> Result<Shape> {
    if a == b {
        return Ok(a);
    }
    let spatial_match = a.n() == b.n() && a.h() == b.h() && a.w() == b.w();
    if spatial_match && a.c() == 1 {
        return Ok(b);
    }
    if spatial_match && b.c() == 1 {
        return Ok(a);
    }
    Err(Error::shape("elementwise", format!("cannot broadcast {a} with {b}")))
}

/// Sums a full-shape gradient down to a single-channel operand.
fn reduce_channels<T: Scalar>(g: &[T], shape: Shape) -> Vec<T> {
    let plane = shape.plane();
    let c = shape.c();
    let mut out = vec![T::zero(); shape.n() * plane];
    for n in 0..shape.n() {
        let o = &mut out[n * plane..(n + 1) * plane];
        for ci in 0..c {
            for (d, &v) in o.iter_mut().zip(&g[(n * c + ci) * plane..(n * c + ci + 1) * plane]) {
                *d = *d + v;
            }
        }
    }
    out
}

/// Gradient contributions `(input id, d loss / d input)` of one node.
fn backward_op<T: Scalar>(nodes: &[Node<T>], node: &Node<T>, dy: &[T]) -> Result<Vec<(usize, Vec<T>)>> {
    let val = |id: usize| nodes[id].value.data();
    let needs = |id: usize| nodes[id].requires_grad;
    let mut out = Vec::new();
    match &node.op {
        Op::Leaf => {}
        Op::Conv2d { x, w, b, geom } => {
            if needs(*x) {
                let mut dx = vec![T::zero(); nodes[*x].value.numel()];
                kernels::conv2d_backward_input(dy, val(*w), geom, &mut dx);
                out.push((*x, dx));
            }
            if needs(*w) {
                let mut dw = vec![T::zero(); nodes[*w].value.numel()];
                kernels::conv2d_backward_weight(val(*x), dy, geom, &mut dw);
                out.push((*w, dw));
            }
            if let Some(b) = b.filter(|&b| needs(b)) {
                out.push((b, kernels::bias_grad(dy, geom.n, geom.c_out, geom.ho * geom.wo)));
            }
        }
        Op::ConvTranspose2d { x, w, b, geom } => {
            // Forward was y = conv_adjoint(x); its adjoint is the plain conv.
            if needs(*x) {
                let mut dx = vec![T::zero(); nodes[*x].value.numel()];
                kernels::conv2d_forward(dy, val(*w), None, geom, &mut dx);
                out.push((*x, dx));
            }
            if needs(*w) {
                let mut dw = vec![T::zero(); nodes[*w].value.numel()];
                kernels::conv2d_backward_weight(dy, val(*x), geom, &mut dw);
                out.push((*w, dw));
            }
            if let Some(b) = b.filter(|&b| needs(b)) {
                out.push((b, kernels::bias_grad(dy, geom.n, geom.c_in, geom.h * geom.w)));
            }
        }
        Op::MatMul {
            a,
            b,
            trans_b,
            dims: (batch, m, k, p),
        } => {
            let (batch, m, k, p) = (*batch, *m, *k, *p);
            if needs(*a) {
                // dA = dY · B^T (or dY · B when B was used transposed)
                let mut da = vec![T::zero(); batch * m * k];
                kernels::batched_matmul(dy, val(*b), &mut da, batch, m, p, k, false, !*trans_b, false);
                out.push((*a, da));
            }
            if needs(*b) {
                let mut db = vec![T::zero(); batch * k * p];
                if *trans_b {
                    // B is (P, K): dB = dY^T · A
                    kernels::batched_matmul(dy, val(*a), &mut db, batch, p, m, k, true, false, false);
                } else {
                    kernels::batched_matmul(val(*a), dy, &mut db, batch, k, m, p, true, false, false);
                }
                out.push((*b, db));
            }
        }
        Op::Softmax { x, axis } => {
            let mut dx = vec![T::zero(); dy.len()];
            kernels::softmax_backward(node.value.data(), dy, node.value.shape(), *axis, &mut dx);
            out.push((*x, dx));
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            means,
            rstds,
        } => {
            let (dx, dg, db) =
                kernels::layer_norm_backward(val(*x), nodes[*x].value.shape(), val(*gamma), means, rstds, dy);
            out.push((*x, dx));
            out.push((*gamma, dg));
            out.push((*beta, db));
        }
        Op::ChannelPool { x, kind, argmax } => {
            let s = nodes[*x].value.shape();
            let plane = s.plane();
            let mut dx = vec![T::zero(); s.numel()];
            match kind {
                PoolKind::Avg => {
                    let inv = T::of(1.0 / s.c() as f64);
                    for n in 0..s.n() {
                        for c in 0..s.c() {
                            let base = (n * s.c() + c) * plane;
                            for p in 0..plane {
                                dx[base + p] = dy[n * plane + p] * inv;
                            }
                        }
                    }
                }
                PoolKind::Max => {
                    for n in 0..s.n() {
                        for p in 0..plane {
                            let c = argmax[n * plane + p] as usize;
                            dx[(n * s.c() + c) * plane + p] = dy[n * plane + p];
                        }
                    }
                }
            }
            out.push((*x, dx));
        }
        Op::Concat { xs } => {
            let s = node.value.shape();
            let plane = s.plane();
            let mut offset = 0;
            for &id in xs {
                let c = nodes[id].value.shape().c();
                if needs(id) {
                    let mut g = Vec::with_capacity(s.n() * c * plane);
                    for n in 0..s.n() {
                        let base = (n * s.c() + offset) * plane;
                        g.extend_from_slice(&dy[base..base + c * plane]);
                    }
                    out.push((id, g));
                }
                offset += c;
            }
        }
        Op::Narrow { x, start } => {
            let s = nodes[*x].value.shape();
            let len = node.value.shape().c();
            let plane = s.plane();
            let mut dx = vec![T::zero(); s.numel()];
            for n in 0..s.n() {
                let base = (n * s.c() + start) * plane;
                dx[base..base + len * plane].copy_from_slice(&dy[n * len * plane..(n + 1) * len * plane]);
            }
            out.push((*x, dx));
        }
        Op::Reshape { x } => out.push((*x, dy.to_vec())),
        Op::Permute { x, perm } => {
            let mut dx = vec![T::zero(); dy.len()];
            kernels::permute(dy, node.value.shape(), kernels::inverse_perm(*perm), &mut dx);
            out.push((*x, dx));
        }
        Op::Binary { kind, a, b } => {
            let (sa, sb) = (nodes[*a].value.shape(), nodes[*b].value.shape());
            let os = node.value.shape();
            let expand = |id: usize, s: Shape| -> Vec<T> {
                if s == os {
                    val(id).to_vec()
                } else {
                    let plane = os.plane();
                    (0..os.numel())
                        .map(|i| val(id)[(i / (os.c() * plane)) * plane + i % plane])
                        .collect()
                }
            };
            let fold = |g: Vec<T>, s: Shape| if s == os { g } else { reduce_channels(&g, os) };
            match kind {
                BinaryOp::Add | BinaryOp::Sub => {
                    if needs(*a) {
                        out.push((*a, fold(dy.to_vec(), sa)));
                    }
                    if needs(*b) {
                        let g = if *kind == BinaryOp::Sub {
                            dy.iter().map(|&v| -v).collect()
                        } else {
                            dy.to_vec()
                        };
                        out.push((*b, fold(g, sb)));
                    }
                }
                BinaryOp::Mul => {
                    if needs(*a) {
                        let bv = expand(*b, sb);
                        let g = dy.iter().zip(&bv).map(|(&d, &v)| d * v).collect();
                        out.push((*a, fold(g, sa)));
                    }
                    if needs(*b) {
                        let av = expand(*a, sa);
                        let g = dy.iter().zip(&av).map(|(&d, &v)| d * v).collect();
                        out.push((*b, fold(g, sb)));
                    }
                }
            }
        }
        Op::Unary { kind, x } => {
            let g = match kind {
                UnaryOp::Sigmoid => dy
                    .iter()
                    .zip(node.value.data())
                    .map(|(&d, &y)| d * y * (T::one() - y))
                    .collect(),
                UnaryOp::Gelu => dy
                    .iter()
                    .zip(val(*x))
                    .map(|(&d, &v)| d * kernels::gelu_grad(v))
                    .collect(),
            };
            out.push((*x, g));
        }
        Op::Scale { x, c } => out.push((*x, dy.iter().map(|&d| d * *c).collect())),
        Op::Reduce { kind, x } => {
            let xv = val(*x);
            let n = T::of(xv.len().max(1) as f64);
            let d = dy[0];
            let g = match kind {
                ReduceKind::Sum => vec![d; xv.len()],
                ReduceKind::Mean => vec![d / n; xv.len()],
                ReduceKind::MeanAbs => xv.iter().map(|&v| d * v.signum() / n * nonzero(v)).collect(),
            };
            out.push((*x, g));
        }
        Op::SampleMean { x } => {
            let xv = val(*x);
            let per = xv.len() / dy.len();
            let inv = T::of(1.0 / per as f64);
            let g = (0..xv.len()).map(|i| dy[i / per] * inv).collect();
            out.push((*x, g));
        }
        Op::Bce { x, target } => {
            let g = dy
                .iter()
                .zip(val(*x))
                .map(|(&d, &z)| {
                    let p = kernels::sigmoid(z);
                    let c = clamp_prob(p);
                    if c != p {
                        T::zero()
                    } else {
                        d * (p - *target)
                    }
                })
                .collect();
            out.push((*x, g));
        }
    }
    Ok(out)
}

/// Subgradient of |x| is taken as 0 at 0.
#[inline]
fn nonzero<T: Scalar>(v: T) -> T {
    if v == T::zero() {
        T::zero()
    } else {
        T::one()
    }
}

/// Gradients of every differentiable leaf of a graph.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.id).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.id).and_then(Option::take)
    }
}
