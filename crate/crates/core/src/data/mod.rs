//! Image I/O, bicubic degradation, synthetic faces and batching.

mod dataset;
mod image;
mod resize;
mod synth;

pub use dataset::{list_images, Batcher, Dataset, Manifest, Sample, SyntheticSpec};
pub use image::{png_read, png_write, ImageBuffer};
pub use resize::{bicubic_resize, contributions, cubic, Taps};
pub use synth::synth_face;
