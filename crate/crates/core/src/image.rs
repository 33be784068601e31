use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Shape {
    pub const fn new(height: usize, width: usize, channels: usize) -> Self {
        Shape { height, width, channels }
    }

    /// 28×28 grayscale.
    pub const fn mnist() -> Self {
        Shape::new(28, 28, 1)
    }

    pub const fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Intensity image with every pixel in `[0, 1]`, stored row-major with
/// interleaved channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    shape: Shape,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(shape: Shape, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != shape.len() {
            return Err(Error::invalid(format!(
                "image has {} pixels, shape {:?} needs {}",
                pixels.len(),
                shape,
                shape.len()
            )));
        }
        if let Some(bad) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::invalid(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(Image { shape, pixels })
    }

    /// Builds an image, clamping every value into `[0, 1]`.
    pub fn from_clamped(shape: Shape, mut pixels: Vec<f64>) -> Result<Self> {
        if pixels.iter().any(|p| p.is_nan()) {
            return Err(Error::Numerical("NaN pixel".into()));
        }
        for p in &mut pixels {
            *p = p.clamp(0.0, 1.0);
        }
        Image::new(shape, pixels)
    }

    pub fn filled(shape: Shape, value: f64) -> Result<Self> {
        Image::new(shape, vec![value; shape.len()])
    }

    /// Uniform white noise, `x ~ U(0, 1)` per pixel.
    pub fn uniform_noise<R: Rng + ?Sized>(shape: Shape, rng: &mut R) -> Self {
        let pixels = (0..shape.len()).map(|_| rng.random::<f64>()).collect();
        Image { shape, pixels }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    /// Callers must keep every value inside `[0, 1]`.
    pub(crate) fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    /// Quantizes to 8 bits per channel.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.pixels.iter().map(|p| (p * 255.0).round() as u8).collect()
    }

    pub fn from_bytes(shape: Shape, bytes: &[u8]) -> Result<Self> {
        Image::new(shape, bytes.iter().map(|&b| b as f64 / 255.0).collect())
    }

    /// Encodes as 8-bit grayscale (one channel) or 24-bit RGB (three channels).
    pub fn to_png(&self) -> Result<Vec<u8>> {
        let color = match self.shape.channels {
            1 => image::ExtendedColorType::L8,
            3 => image::ExtendedColorType::Rgb8,
            c => return Err(Error::invalid(format!("cannot encode {c}-channel image as PNG"))),
        };
        let mut out = Vec::new();
        let encoder = image::codecs::png::PngEncoder::new(&mut out);
        image::ImageEncoder::write_image(
            encoder,
            &self.to_bytes(),
            self.shape.width as u32,
            self.shape.height as u32,
            color,
        )?;
        Ok(out)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_png()?)?;
        Ok(())
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let decoded = image::open(path)?;
        let (width, height) = (decoded.width() as usize, decoded.height() as usize);
        match decoded {
            image::DynamicImage::ImageLuma8(buf) => {
                Image::from_bytes(Shape::new(height, width, 1), buf.as_raw())
            }
            other => {
                let rgb = other.to_rgb8();
                Image::from_bytes(Shape::new(height, width, 3), rgb.as_raw())
            }
        }
    }
}
