use std::io::Cursor;

use image::codecs::jpeg::JpegEncoder;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::focusing::HighPassConfig;
use crate::plane::{ImagePlane, RawImage, CHANNELS};

/// Post-processing applied to a protected image before recognition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransformSpec {
    GaussianNoise { sigma: f64, seed: u64 },
    GaussianBlur { sigma: f64 },
    Jpeg { quality: u8 },
    Brightness { offset: f64 },
    Contrast { factor: f64 },
}

impl TransformSpec {
    pub fn validate(&self) -> Result<()> {
        let (name, v, lo, hi) = match *self {
            TransformSpec::GaussianNoise { sigma, .. } => ("noise sigma", sigma, 0.0, 0.1),
            TransformSpec::GaussianBlur { sigma } => ("blur sigma", sigma, 0.0, 3.0),
            TransformSpec::Jpeg { quality } => ("jpeg quality", quality as f64, 10.0, 100.0),
            TransformSpec::Brightness { offset } => ("brightness offset", offset, -0.3, 0.3),
            TransformSpec::Contrast { factor } => ("contrast factor", factor, 0.5, 1.5),
        };
        if v.is_finite() && (lo..=hi).contains(&v) {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("{name} {v} outside [{lo}, {hi}]")))
        }
    }

    /// Short label such as `jpeg:q30` or `blur:2`.
    pub fn label(&self) -> String {
        match *self {
            TransformSpec::GaussianNoise { sigma, .. } => format!("noise:{sigma}"),
            TransformSpec::GaussianBlur { sigma } => format!("blur:{sigma}"),
            TransformSpec::Jpeg { quality } => format!("jpeg:q{quality}"),
            TransformSpec::Brightness { offset } => format!("brightness:{offset}"),
            TransformSpec::Contrast { factor } => format!("contrast:{factor}"),
        }
    }

    /// Parses `noise:SIGMA[:SEED]`, `blur:SIGMA`, `jpeg:QUALITY`,
    /// `brightness:OFFSET` or `contrast:FACTOR`.
    pub fn parse(text: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("cannot parse transform {text:?}"));
        let mut parts = text.split(':');
        let kind = parts.next().ok_or_else(bad)?;
        let value = parts.next().ok_or_else(bad)?;
        let num = |s: &str| s.trim_start_matches('q').parse::<f64>().map_err(|_| bad());
        let spec = match kind {
            "noise" => TransformSpec::GaussianNoise {
                sigma: num(value)?,
                seed: parts.next().map(|s| s.parse().map_err(|_| bad())).transpose()?.unwrap_or(0),
            },
            "blur" => TransformSpec::GaussianBlur { sigma: num(value)? },
            "jpeg" => {
                let q = num(value)?;
                if q.fract() != 0.0 || !(0.0..=255.0).contains(&q) {
                    return Err(bad());
                }
                TransformSpec::Jpeg { quality: q as u8 }
            }
            "brightness" => TransformSpec::Brightness { offset: num(value)? },
            "contrast" => TransformSpec::Contrast { factor: num(value)? },
            _ => return Err(bad()),
        };
        if !matches!(spec, TransformSpec::GaussianNoise { .. }) && parts.next().is_some() {
            return Err(bad());
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn map_pixels(image: &ImagePlane, f: impl Fn(f64) -> f64) -> Result<ImagePlane> {
    let data = image.data().iter().map(|&v| f(v as f64).clamp(0.0, 1.0) as f32).collect();
    ImagePlane::new(image.height(), image.width(), data)
}

fn blur(image: &ImagePlane, sigma: f64) -> Result<ImagePlane> {
    let radius = ((3.0 * sigma).ceil() as usize).max(1);
    let kernel = HighPassConfig { sigma, mu: 0.0, radius }.kernel();
    let (h, w) = (image.height(), image.width());
    let r = radius as i64;
    let reflect = crate::focusing::reflect;
    let src = image.data();
    let mut tmp = vec![0.0f64; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..CHANNELS {
                tmp[(y * w + x) * CHANNELS + c] = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, kv)| kv * src[(y * w + reflect(x as i64 + k as i64 - r, w)) * CHANNELS + c] as f64)
                    .sum();
            }
        }
    }
    let mut out = vec![0.0f32; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..CHANNELS {
                let v: f64 = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, kv)| kv * tmp[(reflect(y as i64 + k as i64 - r, h) * w + x) * CHANNELS + c])
                    .sum();
                out[(y * w + x) * CHANNELS + c] = v.clamp(0.0, 1.0) as f32;
            }
        }
    }
    ImagePlane::new(h, w, out)
}

fn jpeg_round_trip(image: &ImagePlane, quality: u8) -> Result<ImagePlane> {
    let rgb = image.to_rgb8();
    let mut buf = Cursor::new(Vec::new());
    JpegEncoder::new_with_quality(&mut buf, quality)
        .encode_image(&rgb)
        .map_err(|e| Error::Codec(e.to_string()))?;
    RawImage::decode(buf.get_ref())?.into_plane()
}

pub fn apply_transform(image: &ImagePlane, t: &TransformSpec) -> Result<ImagePlane> {
    t.validate()?;
    match *t {
        TransformSpec::GaussianNoise { sigma, seed } => {
            if sigma == 0.0 {
                return Ok(image.clone());
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?;
            let data = image
                .data()
                .iter()
                .map(|&v| (v as f64 + normal.sample(&mut rng)).clamp(0.0, 1.0) as f32)
                .collect();
            ImagePlane::new(image.height(), image.width(), data)
        }
        TransformSpec::GaussianBlur { sigma } if sigma == 0.0 => Ok(image.clone()),
        TransformSpec::GaussianBlur { sigma } => blur(image, sigma),
        TransformSpec::Jpeg { quality } => jpeg_round_trip(image, quality),
        TransformSpec::Brightness { offset } => map_pixels(image, |v| v + offset),
        TransformSpec::Contrast { factor } => map_pixels(image, |v| (v - 0.5) * factor + 0.5),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random(seed: u64) -> ImagePlane {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImagePlane::new(16, 16, (0..16 * 16 * 3).map(|_| rng.gen()).collect()).unwrap()
    }

    #[test]
    fn identity_strengths_leave_image_unchanged() {
        let img = random(1);
        for t in [
            TransformSpec::GaussianNoise { sigma: 0.0, seed: 3 },
            TransformSpec::GaussianBlur { sigma: 0.0 },
            TransformSpec::Brightness { offset: 0.0 },
            TransformSpec::Contrast { factor: 1.0 },
        ] {
            assert_eq!(apply_transform(&img, &t).unwrap(), img, "{}", t.label());
        }
        let q100 = apply_transform(&img, &TransformSpec::Jpeg { quality: 100 }).unwrap();
        let worst = q100
            .data()
            .iter()
            .zip(img.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(worst < 0.1, "jpeg q100 deviation {worst}");
    }

    #[test]
    fn brightness_clamps() {
        let img = ImagePlane::constant(16, 16, 0.9).unwrap();
        let out = apply_transform(&img, &TransformSpec::Brightness { offset: 0.3 }).unwrap();
        assert!(out.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn noise_matches_seeded_generator() {
        let img = ImagePlane::constant(16, 16, 0.5).unwrap();
        let out = apply_transform(&img, &TransformSpec::GaussianNoise { sigma: 0.05, seed: 77 }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let normal = Normal::new(0.0, 0.05).unwrap();
        for &v in out.data() {
            let expected = (0.5f64 + normal.sample(&mut rng)).clamp(0.0, 1.0) as f32;
            assert_eq!(v, expected);
        }
    }

    #[test]
    fn blur_preserves_constant_and_smooths() {
        let flat = ImagePlane::constant(16, 16, 0.25).unwrap();
        let out = apply_transform(&flat, &TransformSpec::GaussianBlur { sigma: 2.0 }).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.25).abs() < 1e-6));
        let img = random(2);
        let b = apply_transform(&img, &TransformSpec::GaussianBlur { sigma: 2.0 }).unwrap();
        let var = |p: &ImagePlane| {
            let m = p.data().iter().map(|&v| v as f64).sum::<f64>() / p.data().len() as f64;
            p.data().iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>()
        };
        assert!(var(&b) < var(&img) * 0.2);
    }

    #[test]
    fn out_of_range_strengths_rejected() {
        let img = random(3);
        for t in [
            TransformSpec::GaussianNoise { sigma: 0.2, seed: 0 },
            TransformSpec::GaussianBlur { sigma: 3.5 },
            TransformSpec::Jpeg { quality: 5 },
            TransformSpec::Brightness { offset: 0.31 },
            TransformSpec::Contrast { factor: 1.6 },
        ] {
            assert!(matches!(apply_transform(&img, &t), Err(Error::InvalidParameter(_))));
        }
    }

    #[test]
    fn parses_labels() {
        assert_eq!(TransformSpec::parse("jpeg:30").unwrap(), TransformSpec::Jpeg { quality: 30 });
        assert_eq!(TransformSpec::parse("jpeg:q30").unwrap(), TransformSpec::Jpeg { quality: 30 });
        assert_eq!(
            TransformSpec::parse("noise:0.05:9").unwrap(),
            TransformSpec::GaussianNoise { sigma: 0.05, seed: 9 }
        );
        assert_eq!(TransformSpec::parse("blur:2").unwrap(), TransformSpec::GaussianBlur { sigma: 2.0 });
        assert!(TransformSpec::parse("sharpen:1").is_err());
        assert!(TransformSpec::parse("blur:9").is_err());
    }
}
