//! Raw compute kernels over row-major slices. No shape validation happens
//! here; callers in [`super::graph`] check extents before dispatch.

use rayon::prelude::*;

use super::{Scalar, Shape};

/// Geometry of a 2-D convolution, seen from the forward (input → output)
/// direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    /// Geometry for input `x`, kernel (C_out, C_in/groups, kh, kw) and the
    /// given output extents.
    pub fn new(x: Shape, w: Shape, stride: usize, pad: usize, groups: usize, ho: usize, wo: usize) -> Self {
        ConvGeom {
            n: x.n(),
            c_in: x.c(),
            h: x.h(),
            w: x.w(),
            c_out: w.n(),
            kh: w.h(),
            kw: w.w(),
            stride,
            pad,
            groups,
            ho,
            wo,
        }
    }

    pub fn cin_g(&self) -> usize {
        self.c_in / self.groups
    }
    pub fn cout_g(&self) -> usize {
        self.c_out / self.groups
    }
    fn col_rows(&self) -> usize {
        self.cin_g() * self.kh * self.kw
    }
    fn out_plane(&self) -> usize {
        self.ho * self.wo
    }
    fn in_plane(&self) -> usize {
        self.h * self.w
    }
    fn is_depthwise(&self) -> bool {
        self.cin_g() == 1 && self.cout_g() == 1
    }
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
    pub fn macs(&self) -> u64 {
        (self.n * self.c_out * self.out_plane() * self.col_rows()) as u64
    }

    /// Valid output-x range `[lo, hi)` for kernel column `kx`.
    #[inline]
    fn ox_range(&self, kx: usize) -> (usize, usize) {
        span(self.wo, self.w, self.stride, self.pad, kx)
    }
}

/// Output positions `o` in `[0, out)` for which `o*stride + k - pad` lands in
/// `[0, len)`.
#[inline]
fn span(out: usize, len: usize, stride: usize, pad: usize, k: usize) -> (usize, usize) {
    // o*stride + k >= pad
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    // o*stride + k - pad <= len - 1
    let hi = if k > len - 1 + pad {
        0
    } else {
        ((len - 1 + pad - k) / stride + 1).min(out)
    };
    (lo.min(hi), hi)
}

fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let plane = g.out_plane();
    let mut row = 0;
    for ci in 0..g.cin_g() {
        let xc = &x[ci * g.in_plane()..(ci + 1) * g.in_plane()];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let dst = &mut cols[row * plane..(row + 1) * plane];
                let (xlo, xhi) = g.ox_range(kx);
                for oy in 0..g.ho {
                    let drow = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        drow.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &xc[iy as usize * g.w..(iy as usize + 1) * g.w];
                    drow[..xlo].iter_mut().for_each(|v| *v = T::zero());
                    drow[xhi..].iter_mut().for_each(|v| *v = T::zero());
                    if xlo < xhi {
                        let ix0 = xlo * g.stride + kx - g.pad;
                        if g.stride == 1 {
                            drow[xlo..xhi].copy_from_slice(&src[ix0..ix0 + (xhi - xlo)]);
                        } else {
                            for (j, d) in drow[xlo..xhi].iter_mut().enumerate() {
                                *d = src[ix0 + j * g.stride];
                            }
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let plane = g.out_plane();
    let mut row = 0;
    for ci in 0..g.cin_g() {
        let xc = &mut dx[ci * g.in_plane()..(ci + 1) * g.in_plane()];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let src = &cols[row * plane..(row + 1) * plane];
                let (xlo, xhi) = g.ox_range(kx);
                if xlo < xhi {
                    for oy in 0..g.ho {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let srow = &src[oy * g.wo..(oy + 1) * g.wo];
                        let drow = &mut xc[iy as usize * g.w..(iy as usize + 1) * g.w];
                        let ix0 = xlo * g.stride + kx - g.pad;
                        if g.stride == 1 {
                            for (d, &s) in drow[ix0..ix0 + (xhi - xlo)].iter_mut().zip(&srow[xlo..xhi]) {
                                *d = *d + s;
                            }
                        } else {
                            for (j, &s) in srow[xlo..xhi].iter().enumerate() {
                                let d = &mut drow[ix0 + j * g.stride];
                                *d = *d + s;
                            }
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// `out = conv(x, w) + b`. `out` is fully overwritten.
pub fn conv2d_forward<T: Scalar>(x: &[T], w: &[T], b: Option<&[T]>, g: &ConvGeom, out: &mut [T]) {
    let x_per = g.c_in * g.in_plane();
    let o_per = g.c_out * g.out_plane();
    out.par_chunks_mut(o_per)
        .zip(x.par_chunks(x_per))
        .for_each(|(o, xs)| {
            if g.is_depthwise() {
                depthwise_forward(xs, w, g, o);
            } else {
                let cols_len = if g.is_pointwise() { 0 } else { g.col_rows() * g.out_plane() };
                T::with_scratch(cols_len, |cols| {
                    let wg_len = g.cout_g() * g.col_rows();
                    for grp in 0..g.groups {
                        let xg = &xs[grp * g.cin_g() * g.in_plane()..(grp + 1) * g.cin_g() * g.in_plane()];
                        let wg = &w[grp * wg_len..(grp + 1) * wg_len];
                        let og = &mut o[grp * g.cout_g() * g.out_plane()..(grp + 1) * g.cout_g() * g.out_plane()];
                        let bmat: &[T] = if g.is_pointwise() {
                            xg
                        } else {
                            im2col(xg, g, cols);
                            cols
                        };
                        T::gemm(
                            g.cout_g(),
                            g.col_rows(),
                            g.out_plane(),
                            wg,
                            (g.col_rows(), 1),
                            bmat,
                            (g.out_plane(), 1),
                            og,
                            false,
                        );
                    }
                });
            }
            if let Some(b) = b {
                for (co, chunk) in o.chunks_mut(g.out_plane()).enumerate() {
                    let bv = b[co];
                    chunk.iter_mut().for_each(|v| *v = *v + bv);
                }
            }
        });
}

fn depthwise_forward<T: Scalar>(x: &[T], w: &[T], g: &ConvGeom, out: &mut [T]) {
    let kk = g.kh * g.kw;
    for c in 0..g.c_out {
        let xc = &x[c * g.in_plane()..(c + 1) * g.in_plane()];
        let oc = &mut out[c * g.out_plane()..(c + 1) * g.out_plane()];
        oc.iter_mut().for_each(|v| *v = T::zero());
        let wc = &w[c * kk..(c + 1) * kk];
        for ky in 0..g.kh {
            let (ylo, yhi) = span(g.ho, g.h, g.stride, g.pad, ky);
            for kx in 0..g.kw {
                let wv = wc[ky * g.kw + kx];
                let (xlo, xhi) = g.ox_range(kx);
                if xlo >= xhi {
                    continue;
                }
                let ix0 = xlo * g.stride + kx - g.pad;
                for oy in ylo..yhi {
                    let iy = oy * g.stride + ky - g.pad;
                    let src = &xc[iy * g.w..(iy + 1) * g.w];
                    let dst = &mut oc[oy * g.wo + xlo..oy * g.wo + xhi];
                    if g.stride == 1 {
                        for (d, &s) in dst.iter_mut().zip(&src[ix0..ix0 + (xhi - xlo)]) {
                            *d = *d + wv * s;
                        }
                    } else {
                        for (j, d) in dst.iter_mut().enumerate() {
                            *d = *d + wv * src[ix0 + j * g.stride];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`conv2d_forward`] with respect to its input (without bias).
/// This is also the forward pass of a transposed convolution. `dx` is fully
/// overwritten.
pub fn conv2d_backward_input<T: Scalar>(dy: &[T], w: &[T], g: &ConvGeom, dx: &mut [T]) {
    let x_per = g.c_in * g.in_plane();
    let o_per = g.c_out * g.out_plane();
    dx.par_chunks_mut(x_per)
        .zip(dy.par_chunks(o_per))
        .for_each(|(dxs, dys)| {
            dxs.iter_mut().for_each(|v| *v = T::zero());
            if g.is_depthwise() {
                depthwise_backward_input(dys, w, g, dxs);
                return;
            }
            let cols_len = if g.is_pointwise() { 0 } else { g.col_rows() * g.out_plane() };
            T::with_scratch(cols_len, |cols| {
                let wg_len = g.cout_g() * g.col_rows();
                for grp in 0..g.groups {
                    let wg = &w[grp * wg_len..(grp + 1) * wg_len];
                    let dyg = &dys[grp * g.cout_g() * g.out_plane()..(grp + 1) * g.cout_g() * g.out_plane()];
                    let dxg = &mut dxs[grp * g.cin_g() * g.in_plane()..(grp + 1) * g.cin_g() * g.in_plane()];
                    let target: &mut [T] = if g.is_pointwise() { dxg } else { &mut *cols };
                    T::gemm(
                        g.col_rows(),
                        g.cout_g(),
                        g.out_plane(),
                        wg,
                        (1, g.col_rows()),
                        dyg,
                        (g.out_plane(), 1),
                        target,
                        false,
                    );
                    if !g.is_pointwise() {
                        col2im(cols, g, dxg);
                    }
                }
            });
        });
}

fn depthwise_backward_input<T: Scalar>(dy: &[T], w: &[T], g: &ConvGeom, dx: &mut [T]) {
    let kk = g.kh * g.kw;
    for c in 0..g.c_out {
        let dyc = &dy[c * g.out_plane()..(c + 1) * g.out_plane()];
        let dxc = &mut dx[c * g.in_plane()..(c + 1) * g.in_plane()];
        let wc = &w[c * kk..(c + 1) * kk];
        for ky in 0..g.kh {
            let (ylo, yhi) = span(g.ho, g.h, g.stride, g.pad, ky);
            for kx in 0..g.kw {
                let wv = wc[ky * g.kw + kx];
                let (xlo, xhi) = g.ox_range(kx);
                if xlo >= xhi {
                    continue;
                }
                let ix0 = xlo * g.stride + kx - g.pad;
                for oy in ylo..yhi {
                    let iy = oy * g.stride + ky - g.pad;
                    let src = &dyc[oy * g.wo + xlo..oy * g.wo + xhi];
                    let dst = &mut dxc[iy * g.w..(iy + 1) * g.w];
                    if g.stride == 1 {
                        for (d, &s) in dst[ix0..ix0 + (xhi - xlo)].iter_mut().zip(src) {
                            *d = *d + wv * s;
                        }
                    } else {
                        for (j, &s) in src.iter().enumerate() {
                            let d = &mut dst[ix0 + j * g.stride];
                            *d = *d + wv * s;
                        }
                    }
                }
            }
        }
    }
}

/// Gradient of [`conv2d_forward`] with respect to the kernel. Per-sample
/// partial sums are reduced in sample order, so the result does not depend
/// on the worker count.
pub fn conv2d_backward_weight<T: Scalar>(x: &[T], dy: &[T], g: &ConvGeom, dw: &mut [T]) {
    let x_per = g.c_in * g.in_plane();
    let o_per = g.c_out * g.out_plane();
    let w_len = g.c_out * g.col_rows();
    let partials: Vec<Vec<T>> = x
        .par_chunks(x_per)
        .zip(dy.par_chunks(o_per))
        .map(|(xs, dys)| {
            let mut part = vec![T::zero(); w_len];
            if g.is_depthwise() {
                depthwise_backward_weight(xs, dys, g, &mut part);
                return part;
            }
            let cols_len = if g.is_pointwise() { 0 } else { g.col_rows() * g.out_plane() };
            T::with_scratch(cols_len, |cols| {
                let wg_len = g.cout_g() * g.col_rows();
                for grp in 0..g.groups {
                    let xg = &xs[grp * g.cin_g() * g.in_plane()..(grp + 1) * g.cin_g() * g.in_plane()];
                    let dyg = &dys[grp * g.cout_g() * g.out_plane()..(grp + 1) * g.cout_g() * g.out_plane()];
                    let bmat: &[T] = if g.is_pointwise() {
                        xg
                    } else {
                        im2col(xg, g, cols);
                        cols
                    };
                    T::gemm(
                        g.cout_g(),
                        g.out_plane(),
                        g.col_rows(),
                        dyg,
                        (g.out_plane(), 1),
                        bmat,
                        (1, g.out_plane()),
                        &mut part[grp * wg_len..(grp + 1) * wg_len],
                        false,
                    );
                }
            });
            part
        })
        .collect();
    dw.iter_mut().for_each(|v| *v = T::zero());
    for part in partials {
        for (d, p) in dw.iter_mut().zip(part) {
            *d = *d + p;
        }
    }
}

fn depthwise_backward_weight<T: Scalar>(x: &[T], dy: &[T], g: &ConvGeom, dw: &mut [T]) {
    let kk = g.kh * g.kw;
    for c in 0..g.c_out {
        let xc = &x[c * g.in_plane()..(c + 1) * g.in_plane()];
        let dyc = &dy[c * g.out_plane()..(c + 1) * g.out_plane()];
        for ky in 0..g.kh {
            let (ylo, yhi) = span(g.ho, g.h, g.stride, g.pad, ky);
            for kx in 0..g.kw {
                let (xlo, xhi) = g.ox_range(kx);
                if xlo >= xhi {
                    continue;
                }
                let ix0 = xlo * g.stride + kx - g.pad;
                let mut acc = T::zero();
                for oy in ylo..yhi {
                    let iy = oy * g.stride + ky - g.pad;
                    let d = &dyc[oy * g.wo + xlo..oy * g.wo + xhi];
                    let s = &xc[iy * g.w..(iy + 1) * g.w];
                    if g.stride == 1 {
                        acc = acc + dot(d, &s[ix0..ix0 + (xhi - xlo)]);
                    } else {
                        for (j, &dv) in d.iter().enumerate() {
                            acc = acc + dv * s[ix0 + j * g.stride];
                        }
                    }
                }
                dw[c * kk + ky * g.kw + kx] = acc;
            }
        }
    }
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    // Four independent accumulators let the compiler vectorize.
    let mut acc = [T::zero(); 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for j in 0..4 {
            acc[j] = acc[j] + a[4 * i + j] * b[4 * i + j];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 4..a.len() {
        tail = tail + a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Sum of `dy` per output channel.
pub fn bias_grad<T: Scalar>(dy: &[T], n: usize, c: usize, plane: usize) -> Vec<T> {
    let mut acc = vec![0.0f64; c];
    for ni in 0..n {
        for (ci, a) in acc.iter_mut().enumerate() {
            let base = (ni * c + ci) * plane;
            *a += dy[base..base + plane].iter().map(|v| v.as_f64()).sum::<f64>();
        }
    }
    acc.into_iter().map(T::of).collect()
}

/// Batched `(B, M, K) · (B, K, P)`. Transpose flags select the operand
/// layouts `(B, K, M)` / `(B, P, K)` instead.
#[allow(clippy::too_many_arguments)]
pub fn batched_matmul<T: Scalar>(
    a: &[T],
    b: &[T],
    out: &mut [T],
    batch: usize,
    m: usize,
    k: usize,
    p: usize,
    trans_a: bool,
    trans_b: bool,
    accumulate: bool,
) {
    let a_strides = if trans_a { (1, m) } else { (k, 1) };
    let b_strides = if trans_b { (1, k) } else { (p, 1) };
    for i in 0..batch {
        T::gemm(
            m,
            k,
            p,
            &a[i * m * k..(i + 1) * m * k],
            a_strides,
            &b[i * k * p..(i + 1) * k * p],
            b_strides,
            &mut out[i * m * p..(i + 1) * m * p],
            accumulate,
        );
    }
}

/// Splits `shape` around `axis` into (outer, len, inner).
pub fn axis_split(shape: Shape, axis: usize) -> (usize, usize, usize) {
    let outer = shape.0[..axis].iter().product();
    let inner = shape.0[axis + 1..].iter().product();
    (outer, shape.0[axis], inner)
}

pub fn softmax<T: Scalar>(x: &[T], shape: Shape, axis: usize, out: &mut [T]) {
    let (outer, len, inner) = axis_split(shape, axis);
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut max = T::neg_infinity();
            for j in 0..len {
                max = max.max(x[base + j * inner]);
            }
            let mut sum = T::zero();
            for j in 0..len {
                let e = (x[base + j * inner] - max).exp();
                out[base + j * inner] = e;
                sum = sum + e;
            }
            let inv = T::one() / sum;
            for j in 0..len {
                out[base + j * inner] = out[base + j * inner] * inv;
            }
        }
    }
}

pub fn softmax_backward<T: Scalar>(y: &[T], dy: &[T], shape: Shape, axis: usize, dx: &mut [T]) {
    let (outer, len, inner) = axis_split(shape, axis);
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut s = T::zero();
            for j in 0..len {
                s = s + y[base + j * inner] * dy[base + j * inner];
            }
            for j in 0..len {
                let idx = base + j * inner;
                dx[idx] = y[idx] * (dy[idx] - s);
            }
        }
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-6;

/// Channel-wise layer norm at every (n, y, x). Returns per-position
/// (mean, 1/std) for the backward pass.
pub fn layer_norm<T: Scalar>(
    x: &[T],
    shape: Shape,
    gamma: &[T],
    beta: &[T],
    out: &mut [T],
) -> (Vec<T>, Vec<T>) {
    let (n, c, plane) = (shape.n(), shape.c(), shape.plane());
    let mut means = vec![T::zero(); n * plane];
    let mut rstds = vec![T::zero(); n * plane];
    let inv_c = T::of(1.0 / c as f64);
    let eps = T::of(LAYER_NORM_EPS);
    for ni in 0..n {
        let xs = &x[ni * c * plane..(ni + 1) * c * plane];
        let mean = &mut means[ni * plane..(ni + 1) * plane];
        for ci in 0..c {
            for (m, &v) in mean.iter_mut().zip(&xs[ci * plane..(ci + 1) * plane]) {
                *m = *m + v;
            }
        }
        mean.iter_mut().for_each(|m| *m = *m * inv_c);
        let rstd = &mut rstds[ni * plane..(ni + 1) * plane];
        for ci in 0..c {
            for ((r, &v), &m) in rstd.iter_mut().zip(&xs[ci * plane..(ci + 1) * plane]).zip(mean.iter()) {
                let d = v - m;
                *r = *r + d * d;
            }
        }
        rstd.iter_mut().for_each(|r| *r = T::one() / (*r * inv_c + eps).sqrt());
        let os = &mut out[ni * c * plane..(ni + 1) * c * plane];
        for ci in 0..c {
            let (g, b) = (gamma[ci], beta[ci]);
            let src = &xs[ci * plane..(ci + 1) * plane];
            let dst = &mut os[ci * plane..(ci + 1) * plane];
            for p in 0..plane {
                dst[p] = (src[p] - mean[p]) * rstd[p] * g + b;
            }
        }
    }
    (means, rstds)
}

/// Returns (dx, dgamma, dbeta).
pub fn layer_norm_backward<T: Scalar>(
    x: &[T],
    shape: Shape,
    gamma: &[T],
    means: &[T],
    rstds: &[T],
    dy: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (n, c, plane) = (shape.n(), shape.c(), shape.plane());
    let mut dx = vec![T::zero(); x.len()];
    let mut dgamma = vec![0.0f64; c];
    let mut dbeta = vec![0.0f64; c];
    let inv_c = T::of(1.0 / c as f64);
    let mut sum_g = vec![T::zero(); plane];
    let mut sum_gx = vec![T::zero(); plane];
    for ni in 0..n {
        let off = ni * c * plane;
        let mean = &means[ni * plane..(ni + 1) * plane];
        let rstd = &rstds[ni * plane..(ni + 1) * plane];
        sum_g.iter_mut().for_each(|v| *v = T::zero());
        sum_gx.iter_mut().for_each(|v| *v = T::zero());
        for ci in 0..c {
            let xs = &x[off + ci * plane..off + (ci + 1) * plane];
            let dys = &dy[off + ci * plane..off + (ci + 1) * plane];
            let g = gamma[ci];
            let (mut dg, mut db) = (0.0f64, 0.0f64);
            for p in 0..plane {
                let xhat = (xs[p] - mean[p]) * rstd[p];
                let gh = dys[p] * g;
                sum_g[p] = sum_g[p] + gh;
                sum_gx[p] = sum_gx[p] + gh * xhat;
                dg += (dys[p] * xhat).as_f64();
                db += dys[p].as_f64();
            }
            dgamma[ci] += dg;
            dbeta[ci] += db;
        }
        for ci in 0..c {
            let xs = &x[off + ci * plane..off + (ci + 1) * plane];
            let dys = &dy[off + ci * plane..off + (ci + 1) * plane];
            let dxs = &mut dx[off + ci * plane..off + (ci + 1) * plane];
            let g = gamma[ci];
            for p in 0..plane {
                let xhat = (xs[p] - mean[p]) * rstd[p];
                let gh = dys[p] * g;
                dxs[p] = rstd[p] * (gh - sum_g[p] * inv_c - xhat * sum_gx[p] * inv_c);
            }
        }
    }
    (
        dx,
        dgamma.into_iter().map(T::of).collect(),
        dbeta.into_iter().map(T::of).collect(),
    )
}

/// Permutes axes: output axis `i` is input axis `perm[i]`.
pub fn permute<T: Scalar>(x: &[T], shape: Shape, perm: [usize; 4], out: &mut [T]) -> Shape {
    let in_strides = shape.strides();
    let out_shape = Shape(perm.map(|p| shape.0[p]));
    let src_strides = perm.map(|p| in_strides[p]);
    let [d0, d1, d2, d3] = out_shape.0;
    let mut i = 0;
    for a in 0..d0 {
        for b in 0..d1 {
            for c in 0..d2 {
                let base = a * src_strides[0] + b * src_strides[1] + c * src_strides[2];
                for d in 0..d3 {
                    out[i] = x[base + d * src_strides[3]];
                    i += 1;
                }
            }
        }
    }
    out_shape
}

pub fn inverse_perm(perm: [usize; 4]) -> [usize; 4] {
    let mut inv = [0; 4];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[inline]
pub fn gelu<T: Scalar>(x: T) -> T {
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let half = T::of(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let half = T::of(0.5);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::of(3.0) * a * x * x)
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
