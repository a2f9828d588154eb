use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{bicubic_resize, png_read, synth_face, ImageBuffer};
use crate::error::{Error, Result};
use crate::tensor::{Rng, Tensor};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub count: usize,
    pub seed: u64,
    #[serde(default = "default_size")]
    pub size: usize,
}

fn default_size() -> usize {
    128
}

fn default_scale() -> usize {
    8
}

fn default_batch() -> usize {
    1
}

fn default_glob() -> String {
    "*.png".into()
}

/// Where training pairs come from and how they are batched. Exactly one of
/// `hr_dir` and `synthetic` must be set.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hr_dir: Option<PathBuf>,
    /// File-name pattern inside `hr_dir`.
    #[serde(default = "default_glob")]
    pub glob: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
    #[serde(default = "default_scale")]
    pub scale: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub shuffle_seed: u64,
    /// The last `holdout` samples (in source order) are reserved for
    /// evaluation and never batched for training.
    #[serde(default)]
    pub holdout: usize,
}

impl Manifest {
    pub fn synthetic(count: usize, seed: u64, size: usize) -> Self {
        Manifest {
            hr_dir: None,
            glob: default_glob(),
            synthetic: Some(SyntheticSpec { count, seed, size }),
            scale: default_scale(),
            batch_size: default_batch(),
            shuffle_seed: 0,
            holdout: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(format!("manifest: {m}")));
        match (&self.hr_dir, &self.synthetic) {
            (Some(_), Some(_)) => return fail("hr_dir and synthetic are mutually exclusive".into()),
            (None, None) => return fail("one of hr_dir or synthetic is required".into()),
            (None, Some(s)) if s.count == 0 => return fail("synthetic count must be ≥ 1".into()),
            _ => {}
        }
        if ![2, 4, 8].contains(&self.scale) {
            return fail(format!("scale {} must be 2, 4 or 8", self.scale));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be ≥ 1".into());
        }
        if let Err(e) = glob::Pattern::new(&self.glob) {
            return fail(format!("bad glob {:?}: {e}", self.glob));
        }
        Ok(())
    }
}

/// One training pair. `lr` is the degraded image; `lr_up` is it bicubically
/// re-upsampled to the HR size, which is what the network consumes.
#[derive(Clone, Debug)]
pub struct Sample {
    pub name: String,
    pub hr: ImageBuffer,
    pub lr: ImageBuffer,
    pub lr_up: ImageBuffer,
}

impl Sample {
    /// Degrades `hr` (centre-cropped to a square and resized to `size` if
    /// needed) by bicubic ↓`scale` then ↑`scale`.
    pub fn from_hr(name: impl Into<String>, hr: &ImageBuffer, size: usize, scale: usize) -> Result<Self> {
        let mut hr = if hr.height() == hr.width() {
            hr.clone()
        } else {
            hr.center_crop_square()
        };
        if hr.height() != size {
            hr = bicubic_resize(&hr, size, size)?;
        }
        if !size.is_multiple_of(scale) {
            return Err(Error::InvalidArgument(format!(
                "HR size {size} is not divisible by scale {scale}"
            )));
        }
        let lr = bicubic_resize(&hr, size / scale, size / scale)?;
        let lr_up = bicubic_resize(&lr, size, size)?;
        Ok(Sample {
            name: name.into(),
            hr,
            lr,
            lr_up,
        })
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    /// Files that matched but could not be decoded.
    pub skipped: usize,
}

impl Dataset {
    /// Resolves the manifest into pairs with HR images of `size × size`.
    pub fn load(manifest: &Manifest, size: usize) -> Result<Self> {
        manifest.validate()?;
        let mut samples = Vec::new();
        let mut skipped = 0;
        if let Some(spec) = &manifest.synthetic {
            for i in 0..spec.count {
                let seed = spec.seed.wrapping_add(i as u64);
                let hr = synth_face(seed, spec.size)?;
                samples.push(Sample::from_hr(format!("synth_{i:04}"), &hr, size, manifest.scale)?);
            }
        } else if let Some(dir) = &manifest.hr_dir {
            for path in list_images(dir, &manifest.glob)? {
                let name = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                match png_read(&path) {
                    Ok(hr) => samples.push(Sample::from_hr(name, &hr, size, manifest.scale)?),
                    Err(e @ (Error::Decode { .. } | Error::UnsupportedImage(_) | Error::Io { .. })) => {
                        log::warn!("skipping {}: {e}", path.display());
                        skipped += 1;
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        if samples.is_empty() {
            return Err(Error::Config(format!(
                "manifest resolved to no readable images ({skipped} skipped)"
            )));
        }
        Ok(Dataset { samples, skipped })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Splits off the last `k` samples. At least one training sample must
    /// remain.
    pub fn split_holdout(mut self, k: usize) -> Result<(Dataset, Dataset)> {
        if k >= self.samples.len() && k > 0 {
            return Err(Error::Config(format!(
                "holdout {k} leaves no training samples out of {}",
                self.samples.len()
            )));
        }
        let held = self.samples.split_off(self.samples.len() - k);
        Ok((
            self,
            Dataset {
                samples: held,
                skipped: 0,
            },
        ))
    }

    /// Stacks the selected samples into `(lr_up, hr)` tensors of shape
    /// (N, 3, S, S).
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let mut lr = Vec::with_capacity(indices.len());
        let mut hr = Vec::with_capacity(indices.len());
        for &i in indices {
            let s = self
                .samples
                .get(i)
                .ok_or_else(|| Error::InvalidArgument(format!("sample {i} out of range")))?;
            lr.push(s.lr_up.to_tensor());
            hr.push(s.hr.to_tensor());
        }
        Ok((Tensor::stack(&lr)?, Tensor::stack(&hr)?))
    }
}

/// Sorted regular files in `dir` whose names match `pattern`.
pub fn list_images(dir: &Path, pattern: &str) -> Result<Vec<PathBuf>> {
    let pat = glob::Pattern::new(pattern)
        .map_err(|e| Error::Config(format!("bad glob {pattern:?}: {e}")))?;
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        let matches = path
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| pat.matches(n));
        if matches && path.is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Epoch-shuffled index stream. Each epoch is a fresh permutation drawn
/// from `(seed, epoch)`, cut into consecutive batches; the last batch of an
/// epoch may be short.
#[derive(Clone, Debug)]
pub struct Batcher {
    len: usize,
    batch_size: usize,
    seed: u64,
    epoch: u64,
    order: Vec<usize>,
    cursor: usize,
}

impl Batcher {
    pub fn new(len: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if len == 0 || batch_size == 0 {
            return Err(Error::InvalidArgument(format!(
                "batcher over {len} samples with batch size {batch_size}"
            )));
        }
        let mut b = Batcher {
            len,
            batch_size,
            seed,
            epoch: 0,
            order: Vec::new(),
            cursor: 0,
        };
        b.reshuffle();
        Ok(b)
    }

    fn reshuffle(&mut self) {
        self.order = (0..self.len).collect();
        Rng::derive(self.seed, self.epoch).shuffle(&mut self.order);
        self.cursor = 0;
    }

    /// Zero-based epoch of the next batch.
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.cursor == self.len {
            self.epoch += 1;
            self.reshuffle();
        }
        let end = (self.cursor + self.batch_size).min(self.len);
        let out = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        out
    }
}
