//! PSNR (on RGB) and single-scale SSIM (on luminance), both on inputs
//! clamped to the valid range.

use std::collections::BTreeSet;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};

use crate::data::{list_images, png_read, ImageBuffer};
use crate::error::{Error, Result};

const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn check_dims(a: &ImageBuffer, b: &ImageBuffer, op: &'static str) -> Result<()> {
    if (a.height(), a.width()) != (b.height(), b.width()) {
        return Err(Error::shape(
            op,
            format!("{}×{} vs {}×{}", a.height(), a.width(), b.height(), b.width()),
        ));
    }
    Ok(())
}

/// PSNR in dB over samples clamped to `[0, max_val]`; `f64::INFINITY` when
/// they are identical.
pub fn psnr_slices(a: &[f32], b: &[f32], max_val: f64) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::shape("psnr", format!("{} vs {} samples", a.len(), b.len())));
    }
    let clamp = |v: f32| f64::from(v).clamp(0.0, max_val);
    let sse: f64 = a.iter().zip(b).map(|(&x, &y)| (clamp(x) - clamp(y)).powi(2)).sum();
    let mse = sse / a.len() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (max_val * max_val / mse).log10()
    })
}

pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    check_dims(a, b, "psnr")?;
    psnr_slices(a.data(), b.data(), 1.0)
}

fn luminance(img: &ImageBuffer) -> Vec<f64> {
    img.data()
        .chunks_exact(3)
        .map(|p| 0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2]))
        .collect()
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
fn gaussian() -> [f64; WINDOW] {
    let mid = (WINDOW / 2) as f64;
    let mut g = [0.0; WINDOW];
    for (i, v) in g.iter_mut().enumerate() {
        *v = (-((i as f64 - mid).powi(2)) / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.map(|v| v / s)
}

/// Valid-mode separable filtering of an `h × w` plane.
fn filter(src: &[f64], h: usize, w: usize, g: &[f64; WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h + 1 - WINDOW, w + 1 - WINDOW);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..WINDOW).map(|k| g[k] * src[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..WINDOW).map(|k| g[k] * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over every position where the 11×11 window fits.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    check_dims(a, b, "ssim")?;
    let (h, w) = (a.height(), a.width());
    if h < WINDOW || w < WINDOW {
        return Err(Error::InvalidArgument(format!(
            "ssim needs images of at least {WINDOW}×{WINDOW}, got {h}×{w}"
        )));
    }
    let (ya, yb) = (luminance(a), luminance(b));
    let g = gaussian();
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
    let mu_a = filter(&ya, h, w, &g);
    let mu_b = filter(&yb, h, w, &g);
    let e_aa = filter(&prod(&ya, &ya), h, w, &g);
    let e_bb = filter(&prod(&yb, &yb), h, w, &g);
    let e_ab = filter(&prod(&ya, &yb), h, w, &g);
    let (c1, c2) = (K1 * K1, K2 * K2);
    let total: f64 = (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / mu_a.len() as f64)
}

/// Infinite PSNR values serialize as `null`.
fn finite_or_null<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_none()
    }
}

fn null_as_inf<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairMetric {
    pub name: String,
    #[serde(serialize_with = "finite_or_null", deserialize_with = "null_as_inf")]
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub pairs: Vec<PairMetric>,
    #[serde(serialize_with = "finite_or_null", deserialize_with = "null_as_inf")]
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub count: usize,
}

impl MetricReport {
    /// Aggregates pairs, sorted by name.
    pub fn from_pairs(mut pairs: Vec<PairMetric>) -> Self {
        pairs.sort_by(|a, b| a.name.cmp(&b.name));
        let n = pairs.len().max(1) as f64;
        MetricReport {
            mean_psnr: pairs.iter().map(|p| p.psnr).sum::<f64>() / n,
            mean_ssim: pairs.iter().map(|p| p.ssim).sum::<f64>() / n,
            count: pairs.len(),
            pairs,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub fn measure(name: impl Into<String>, sr: &ImageBuffer, hr: &ImageBuffer) -> Result<PairMetric> {
    Ok(PairMetric {
        name: name.into(),
        psnr: psnr(sr, hr)?,
        ssim: ssim(sr, hr)?,
    })
}

fn file_names(dir: &Path) -> Result<BTreeSet<String>> {
    Ok(list_images(dir, "*.png")?
        .iter()
        .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .collect())
}

/// Compares every PNG in `dir_sr` with the same-named PNG in `dir_hr`.
pub fn evaluate(dir_sr: impl AsRef<Path>, dir_hr: impl AsRef<Path>) -> Result<MetricReport> {
    let (dir_sr, dir_hr) = (dir_sr.as_ref(), dir_hr.as_ref());
    let sr = file_names(dir_sr)?;
    let hr = file_names(dir_hr)?;
    if let Some(name) = sr.symmetric_difference(&hr).next() {
        return Err(Error::MissingCounterpart(name.clone()));
    }
    if sr.is_empty() {
        return Err(Error::InvalidArgument(format!("no PNG files in {}", dir_sr.display())));
    }
    let names: Vec<_> = sr.into_iter().collect();
    let pairs = names
        .par_iter()
        .map(|n| measure(n.clone(), &png_read(dir_sr.join(n))?, &png_read(dir_hr.join(n))?))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport::from_pairs(pairs))
}
