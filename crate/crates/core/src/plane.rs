//! Pixel containers.
//!
//! [`ImagePlane`] is the validated H×W×3 image every stage works on. Values are
//! `f32` in `[0, 1]`, stored row-major in `(y, x, c)` order. [`RawImage`] is
//! the unvalidated form codecs and external services hand back before resizing.

use std::fmt;
use std::io::Cursor;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;
pub const MIN_SIDE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Shape {
    pub const fn new(height: usize, width: usize) -> Self {
        Shape {
            height,
            width,
            channels: CHANNELS,
        }
    }

    pub const fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub const fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels != CHANNELS {
            return Err(Error::InvariantViolation(format!(
                "expected {CHANNELS} channels, got {}",
                self.channels
            )));
        }
        if self.height < MIN_SIDE || self.width < MIN_SIDE {
            return Err(Error::InvariantViolation(format!(
                "image must be at least {MIN_SIDE}x{MIN_SIDE}, got {}x{}",
                self.height, self.width
            )));
        }
        Ok(())
    }

    pub(crate) fn ensure_eq(&self, other: &Shape) -> Result<()> {
        if self != other {
            return Err(Error::shape(self, other));
        }
        Ok(())
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

/// A validated RGB image with channel values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePlane {
    shape: Shape,
    data: Vec<f32>,
}

impl ImagePlane {
    /// Builds an image, rejecting non-finite or out-of-range values.
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        let shape = Shape::new(height, width);
        shape.validate()?;
        if data.len() != shape.len() {
            return Err(Error::shape(
                format!("{} values", shape.len()),
                format!("{} values", data.len()),
            ));
        }
        if let Some((i, v)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0 || **v > 1.0)
        {
            return Err(Error::InvariantViolation(format!(
                "pixel {i} has value {v}, outside [0, 1]"
            )));
        }
        Ok(ImagePlane { shape, data })
    }

    /// Builds an image by clamping every value into `[0, 1]`. Non-finite
    /// values are still rejected.
    pub fn from_clamped(height: usize, width: usize, mut data: Vec<f32>) -> Result<Self> {
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("pixel value {v}")));
        }
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        Self::new(height, width, data)
    }

    pub fn constant(height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(height, width, vec![value; height * width * CHANNELS])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * CHANNELS);
        for y in 0..height {
            for x in 0..width {
                for c in 0..CHANNELS {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, data)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[self.shape.index(y, x, c)]
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    /// Little-endian `f32` encoding of the pixel payload.
    pub fn payload_bytes(&self) -> Vec<u8> {
        f32_le_bytes(&self.data)
    }

    /// Lowercase hex SHA-256 of [`payload_bytes`](Self::payload_bytes).
    pub fn payload_sha256(&self) -> String {
        hex::encode(Sha256::digest(self.payload_bytes()))
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let raw: Vec<u8> = self
            .data
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        image::RgbImage::from_raw(self.width() as u32, self.height() as u32, raw)
            .expect("buffer length matches dimensions")
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Result<Self> {
        let data = img.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
        Self::new(img.height() as usize, img.width() as usize, data)
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        encode_png(&self.to_rgb8())
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.encode_png()?;
        std::fs::write(path, bytes).map_err(|source| Error::Persistence {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn to_raw(&self) -> RawImage {
        RawImage {
            height: self.height(),
            width: self.width(),
            data: self.data.clone(),
        }
    }
}

/// Unvalidated RGB pixels in `(y, x, c)` order. Any size, any values.
#[derive(Debug, Clone, PartialEq)]
pub struct RawImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl RawImage {
    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        RawImage {
            height: img.height() as usize,
            width: img.width() as usize,
            data: img.as_raw().iter().map(|&v| v as f32 / 255.0).collect(),
        }
    }

    /// Decodes PNG or JPEG bytes.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory(bytes).map_err(|e| Error::Codec(e.to_string()))?;
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes).map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * CHANNELS + c]
    }

    pub fn into_plane(self) -> Result<ImagePlane> {
        ImagePlane::new(self.height, self.width, self.data)
    }
}

pub(crate) fn encode_png(img: &image::RgbImage) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png)
        .map_err(|e| Error::Codec(e.to_string()))?;
    Ok(out.into_inner())
}

pub(crate) fn f32_le_bytes(values: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub(crate) fn f32_from_le_bytes(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect()
}
