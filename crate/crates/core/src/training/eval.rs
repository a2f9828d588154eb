use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ImageBuffer};
use crate::error::Result;
use crate::metrics::{measure, MetricReport};
use crate::network::{Aminet, ArchConfig, ParamStore};
use crate::tensor::{Graph, Scalar, Tensor};

/// Runs the network on pre-upsampled images of one size, returning the
/// clamped reconstructions in input order.
pub fn super_resolve<T: Scalar>(
    store: &ParamStore<T>,
    arch: &ArchConfig,
    inputs: &[&ImageBuffer],
) -> Result<Vec<ImageBuffer>> {
    if inputs.is_empty() {
        return Ok(Vec::new());
    }
    let batch = Tensor::stack(&inputs.iter().map(|im| im.to_tensor::<T>()).collect::<Vec<_>>())?;
    let g = Graph::<T>::new();
    let bound = store.bind_frozen(&g);
    let net = Aminet::bind(&bound, arch)?;
    let y = net.forward(&g, g.constant(batch))?;
    let out = g.value(y);
    (0..inputs.len()).map(|n| ImageBuffer::from_tensor(&out, n)).collect()
}

/// Metrics of the network output and of the bicubic input against the HR
/// images of a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HoldoutReport {
    pub sr: MetricReport,
    pub bicubic: MetricReport,
}

impl HoldoutReport {
    /// Mean PSNR gain of the network over bicubic interpolation, in dB.
    pub fn psnr_gain(&self) -> f64 {
        self.sr.mean_psnr - self.bicubic.mean_psnr
    }
}

/// Evaluates `store` on every sample of `data`, `chunk` images per forward.
pub fn evaluate_dataset(
    store: &ParamStore<f32>,
    arch: &ArchConfig,
    data: &Dataset,
    chunk: usize,
) -> Result<HoldoutReport> {
    let mut sr = Vec::with_capacity(data.len());
    let mut bicubic = Vec::with_capacity(data.len());
    for group in data.samples.chunks(chunk.max(1)) {
        let inputs: Vec<&ImageBuffer> = group.iter().map(|s| &s.lr_up).collect();
        for (s, out) in group.iter().zip(super_resolve(store, arch, &inputs)?) {
            sr.push(measure(&s.name, &out, &s.hr)?);
            bicubic.push(measure(&s.name, &s.lr_up, &s.hr)?);
        }
    }
    Ok(HoldoutReport {
        sr: MetricReport::from_pairs(sr),
        bicubic: MetricReport::from_pairs(bicubic),
    })
}
