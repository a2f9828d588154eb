use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use png::{BitDepth, ColorType, Transformations};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// An RGB image with f32 samples in [0, 1], stored row-major and
/// channel-interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImageBuffer {
    /// Values are clamped into [0, 1].
    pub fn new(height: usize, width: usize, mut data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::InvalidArgument(format!(
                "{} samples for a {height}×{width} RGB image",
                data.len()
            )));
        }
        data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        Ok(ImageBuffer { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend(f(y, x).iter().map(|v| v.clamp(0.0, 1.0)));
            }
        }
        ImageBuffer { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// (1, 3, H, W) planar tensor.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_fn([1, 3, self.height, self.width], |_, c, y, x| {
            T::of(f64::from(self.data[(y * self.width + x) * 3 + c]))
        })
    }

    /// Sample `n` of an (N, 3, H, W) tensor, clamped into [0, 1].
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>, n: usize) -> Result<Self> {
        let s = t.shape();
        if s.c() != 3 || n >= s.n() {
            return Err(Error::InvalidArgument(format!(
                "cannot take RGB sample {n} from a {s} tensor"
            )));
        }
        Ok(ImageBuffer::from_fn(s.h(), s.w(), |y, x| {
            [0, 1, 2].map(|c| t.at(n, c, y, x).as_f64() as f32)
        }))
    }

    /// Largest centred square.
    pub fn center_crop_square(&self) -> ImageBuffer {
        let side = self.height.min(self.width);
        let (oy, ox) = ((self.height - side) / 2, (self.width - side) / 2);
        ImageBuffer::from_fn(side, side, |y, x| self.pixel(y + oy, x + ox))
    }

    /// 8-bit quantization `round(v·255)`.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|v| (v * 255.0).round() as u8).collect()
    }
}

fn decode_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

/// Reads an 8-bit (or lower) PNG. Grayscale is replicated to RGB, palettes
/// are expanded and alpha is dropped. 16-bit images are rejected.
pub fn png_read(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| decode_err(path, e))?;
    if reader.info().bit_depth == BitDepth::Sixteen {
        return Err(Error::UnsupportedImage(format!(
            "{}: unsupported bit depth 16 (only 8-bit PNG is supported)",
            path.display()
        )));
    }
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let frame = reader.next_frame(&mut buf).map_err(|e| decode_err(path, e))?;
    let (h, w) = (frame.height as usize, frame.width as usize);
    let channels = match frame.color_type {
        ColorType::Grayscale => 1,
        ColorType::GrayscaleAlpha => 2,
        ColorType::Rgb => 3,
        ColorType::Rgba => 4,
        ColorType::Indexed => {
            return Err(Error::UnsupportedImage(format!(
                "{}: palette was not expanded",
                path.display()
            )))
        }
    };
    let buf = &buf[..frame.buffer_size()];
    let mut data = Vec::with_capacity(h * w * 3);
    for px in buf.chunks_exact(channels) {
        let rgb = if channels < 3 { [px[0]; 3] } else { [px[0], px[1], px[2]] };
        data.extend(rgb.iter().map(|&v| f32::from(v) / 255.0));
    }
    ImageBuffer::new(h, w, data)
}

/// Writes an 8-bit RGB PNG.
pub fn png_write(path: impl AsRef<Path>, img: &ImageBuffer) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), img.width as u32, img.height as u32);
    encoder.set_color(ColorType::Rgb);
    encoder.set_depth(BitDepth::Eight);
    let mut writer = encoder.write_header().map_err(|e| decode_err(path, e))?;
    writer
        .write_image_data(&img.to_u8())
        .map_err(|e| decode_err(path, e))?;
    writer.finish().map_err(|e| decode_err(path, e))
}
