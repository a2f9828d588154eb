//! Separable bicubic resampling.
//!
//! The cubic kernel uses a = −0.5. When shrinking, the kernel is stretched
//! by the minification factor so every input pixel contributes (the usual
//! anti-aliased resize). Samples outside the image are mirrored about the
//! border (half-sample symmetric), and each output's weights are normalized
//! to sum to one.

use super::ImageBuffer;
use crate::error::{Error, Result};

const A: f64 = -0.5;

/// Cubic convolution kernel, support [−2, 2].
pub fn cubic(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// Mirrors an out-of-range index back into `0..n`: …, 1, 0 | 0, 1, …, n−1 | n−1, n−2, ….
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

/// One output sample's taps: (input index, weight), weights summing to 1.
pub type Taps = Vec<(usize, f64)>;

/// Interpolation taps for resampling a line of `in_len` samples to
/// `out_len`, with pixel centres aligned.
pub fn contributions(in_len: usize, out_len: usize) -> Vec<Taps> {
    let ratio = out_len as f64 / in_len as f64;
    let stretch = if ratio < 1.0 { 1.0 / ratio } else { 1.0 };
    let support = 2.0 * stretch;
    (0..out_len)
        .map(|o| {
            let centre = (o as f64 + 0.5) / ratio - 0.5;
            let lo = (centre - support).floor() as isize;
            let hi = (centre + support).ceil() as isize;
            let mut taps: Taps = Vec::with_capacity((hi - lo + 1) as usize);
            for i in lo..=hi {
                let w = cubic((i as f64 - centre) / stretch);
                if w == 0.0 {
                    continue;
                }
                let j = reflect(i, in_len);
                match taps.iter_mut().find(|(k, _)| *k == j) {
                    Some(t) => t.1 += w,
                    None => taps.push((j, w)),
                }
            }
            let total: f64 = taps.iter().map(|t| t.1).sum();
            taps.iter_mut().for_each(|t| t.1 /= total);
            taps
        })
        .collect()
}

/// Resizes to `out_h × out_w`. Shrinking an axis requires the target extent
/// on that axis to be at least 4.
pub fn bicubic_resize(img: &ImageBuffer, out_h: usize, out_w: usize) -> Result<ImageBuffer> {
    let (h, w) = (img.height(), img.width());
    for (axis, from, to) in [("height", h, out_h), ("width", w, out_w)] {
        if to == 0 || from == 0 || (to < from && to < 4) {
            return Err(Error::InvalidArgument(format!(
                "cannot resize {axis} from {from} to {to}"
            )));
        }
    }
    let src = img.data();
    // Horizontal pass into an f64 buffer, then vertical.
    let cols = contributions(w, out_w);
    let mut tmp = vec![0.0f64; h * out_w * 3];
    for y in 0..h {
        for (x, taps) in cols.iter().enumerate() {
            let mut acc = [0.0f64; 3];
            for &(j, wt) in taps {
                let p = (y * w + j) * 3;
                for c in 0..3 {
                    acc[c] += wt * f64::from(src[p + c]);
                }
            }
            tmp[(y * out_w + x) * 3..][..3].copy_from_slice(&acc);
        }
    }
    let rows = contributions(h, out_h);
    let mut out = vec![0.0f32; out_h * out_w * 3];
    for (y, taps) in rows.iter().enumerate() {
        for x in 0..out_w {
            let mut acc = [0.0f64; 3];
            for &(i, wt) in taps {
                let p = (i * out_w + x) * 3;
                for c in 0..3 {
                    acc[c] += wt * tmp[p + c];
                }
            }
            for c in 0..3 {
                out[(y * out_w + x) * 3 + c] = acc[c] as f32;
            }
        }
    }
    ImageBuffer::new(out_h, out_w, out)
}
