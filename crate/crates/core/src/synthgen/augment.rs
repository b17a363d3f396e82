use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plane::{ImagePlane, CHANNELS};

pub const MAX_ROTATION_DEG: f64 = 10.0;
pub const SCALE_RANGE: (f64, f64) = (0.9, 1.1);
pub const MAX_BRIGHTNESS: f64 = 0.1;
pub const CONTRAST_RANGE: (f64, f64) = (0.85, 1.15);
pub const MAX_JITTER_SIGMA: f64 = 0.02;

/// One concrete augmentation. Geometry is applied about the image centre,
/// flip first, then rotation and scale; photometric changes follow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub flip: bool,
    pub rotation_deg: f64,
    pub scale: f64,
    pub brightness: f64,
    pub contrast: f64,
    pub jitter_sigma: f64,
    pub noise_seed: u64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        AugmentParams {
            flip: false,
            rotation_deg: 0.0,
            scale: 1.0,
            brightness: 0.0,
            contrast: 1.0,
            jitter_sigma: 0.0,
            noise_seed: 0,
        }
    }
}

fn within(name: &str, v: f64, lo: f64, hi: f64) -> Result<()> {
    if v.is_finite() && v >= lo && v <= hi {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} {v} outside [{lo}, {hi}]")))
    }
}

impl AugmentParams {
    pub fn validate(&self) -> Result<()> {
        within("rotation", self.rotation_deg, -MAX_ROTATION_DEG, MAX_ROTATION_DEG)?;
        within("scale", self.scale, SCALE_RANGE.0, SCALE_RANGE.1)?;
        within("brightness", self.brightness, -MAX_BRIGHTNESS, MAX_BRIGHTNESS)?;
        within("contrast", self.contrast, CONTRAST_RANGE.0, CONTRAST_RANGE.1)?;
        within("jitter sigma", self.jitter_sigma, 0.0, MAX_JITTER_SIGMA)
    }

    fn is_rigid_identity(&self) -> bool {
        !self.flip && self.rotation_deg == 0.0 && self.scale == 1.0
    }
}

/// Sampling ranges for random augmentations. Every bound must sit inside the
/// limits accepted by [`AugmentParams::validate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentRanges {
    pub flip_probability: f64,
    pub max_rotation_deg: f64,
    pub scale: (f64, f64),
    pub max_brightness: f64,
    pub contrast: (f64, f64),
    pub jitter_sigma: f64,
}

impl Default for AugmentRanges {
    fn default() -> Self {
        AugmentRanges {
            flip_probability: 0.5,
            max_rotation_deg: MAX_ROTATION_DEG,
            scale: SCALE_RANGE,
            max_brightness: MAX_BRIGHTNESS,
            contrast: CONTRAST_RANGE,
            jitter_sigma: 0.01,
        }
    }
}

impl AugmentRanges {
    pub fn validate(&self) -> Result<()> {
        within("flip probability", self.flip_probability, 0.0, 1.0)?;
        within("max rotation", self.max_rotation_deg, 0.0, MAX_ROTATION_DEG)?;
        within("max brightness", self.max_brightness, 0.0, MAX_BRIGHTNESS)?;
        within("jitter sigma", self.jitter_sigma, 0.0, MAX_JITTER_SIGMA)?;
        for (name, (lo, hi), (min, max)) in [
            ("scale", self.scale, SCALE_RANGE),
            ("contrast", self.contrast, CONTRAST_RANGE),
        ] {
            within(name, lo, min, max)?;
            within(name, hi, lo, max)?;
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> AugmentParams {
        let mut uniform = |lo: f64, hi: f64| if lo < hi { rng.gen_range(lo..=hi) } else { lo };
        let rotation_deg = uniform(-self.max_rotation_deg, self.max_rotation_deg);
        let scale = uniform(self.scale.0, self.scale.1);
        let brightness = uniform(-self.max_brightness, self.max_brightness);
        let contrast = uniform(self.contrast.0, self.contrast.1);
        AugmentParams {
            flip: rng.gen_bool(self.flip_probability),
            rotation_deg,
            scale,
            brightness,
            contrast,
            jitter_sigma: self.jitter_sigma,
            noise_seed: rng.gen(),
        }
    }
}

fn sample_bilinear(data: &[f32], h: usize, w: usize, y: f64, x: f64, c: usize) -> f64 {
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
    let at = |yy: usize, xx: usize| data[(yy * w + xx) * CHANNELS + c] as f64;
    (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x1))
        + fy * ((1.0 - fx) * at(y1, x0) + fx * at(y1, x1))
}

/// Applies one augmentation. Rotation is counter-clockwise in `(x, y)` pixel
/// coordinates, so a point `p` lands at `c + s·R(θ)(p − c)`.
pub fn augment_once(seed: &ImagePlane, params: &AugmentParams) -> Result<ImagePlane> {
    params.validate()?;
    let (h, w) = (seed.height(), seed.width());
    let src = seed.data();
    let mut out: Vec<f64> = src.iter().map(|&v| v as f64).collect();

    if !params.is_rigid_identity() {
        let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
        let theta = params.rotation_deg.to_radians();
        let (sin, cos) = theta.sin_cos();
        for y in 0..h {
            for x in 0..w {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                // Inverse rotation and scale back to the (flipped) source.
                let sx = (cos * dx + sin * dy) / params.scale + cx;
                let sy = (-sin * dx + cos * dy) / params.scale + cy;
                let sx = if params.flip { w as f64 - 1.0 - sx } else { sx };
                for c in 0..CHANNELS {
                    out[(y * w + x) * CHANNELS + c] = sample_bilinear(src, h, w, sy, sx, c);
                }
            }
        }
    }

    let mut noise = (params.jitter_sigma > 0.0).then(|| {
        let rng = ChaCha8Rng::seed_from_u64(params.noise_seed);
        let normal = Normal::new(0.0, params.jitter_sigma).expect("validated sigma");
        (normal, rng)
    });
    let data = out
        .into_iter()
        .map(|v| {
            let mut v = (v - 0.5) * params.contrast + 0.5 + params.brightness;
            if let Some((normal, rng)) = noise.as_mut() {
                v += normal.sample(rng);
            }
            v.clamp(0.0, 1.0) as f32
        })
        .collect();
    ImagePlane::new(h, w, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient_image() -> ImagePlane {
        ImagePlane::from_fn(20, 24, |y, x, c| ((y * 7 + x * 3 + c * 11) % 29) as f32 / 28.0).unwrap()
    }

    #[test]
    fn neutral_params_are_identity() {
        let img = gradient_image();
        assert_eq!(augment_once(&img, &AugmentParams::default()).unwrap(), img);
    }

    #[test]
    fn brightness_saturates() {
        let img = ImagePlane::constant(16, 16, 0.95).unwrap();
        let p = AugmentParams { brightness: 0.1, ..Default::default() };
        assert!(augment_once(&img, &p).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn flip_mirrors_columns() {
        let img = gradient_image();
        let out = augment_once(&img, &AugmentParams { flip: true, ..Default::default() }).unwrap();
        for y in 0..20 {
            for x in 0..24 {
                assert_eq!(out.get(y, x, 1), img.get(y, 23 - x, 1));
            }
        }
    }

    #[test]
    fn rotated_impulse_lands_at_analytic_position() {
        let (h, w) = (41, 41);
        let (py, px) = (10usize, 28usize);
        let mut data = vec![0.0f32; h * w * 3];
        for c in 0..3 {
            data[(py * w + px) * 3 + c] = 1.0;
        }
        let img = ImagePlane::new(h, w, data).unwrap();
        for deg in [10.0f64, -10.0, 4.5] {
            let out = augment_once(&img, &AugmentParams { rotation_deg: deg, ..Default::default() })
                .unwrap();
            let (mut best, mut at) = (f32::MIN, (0, 0));
            for y in 0..h {
                for x in 0..w {
                    if out.get(y, x, 0) > best {
                        best = out.get(y, x, 0);
                        at = (y, x);
                    }
                }
            }
            let t = deg.to_radians();
            let (dx, dy) = (px as f64 - 20.0, py as f64 - 20.0);
            let ex = 20.0 + t.cos() * dx - t.sin() * dy;
            let ey = 20.0 + t.sin() * dx + t.cos() * dy;
            assert!((at.1 as f64 - ex).abs() <= 1.0, "x {} vs {ex}", at.1);
            assert!((at.0 as f64 - ey).abs() <= 1.0, "y {} vs {ey}", at.0);
        }
    }

    #[test]
    fn out_of_range_params_rejected() {
        let img = gradient_image();
        for p in [
            AugmentParams { rotation_deg: 10.5, ..Default::default() },
            AugmentParams { scale: 1.2, ..Default::default() },
            AugmentParams { brightness: -0.2, ..Default::default() },
            AugmentParams { contrast: 0.5, ..Default::default() },
            AugmentParams { jitter_sigma: 0.03, ..Default::default() },
            AugmentParams { scale: f64::NAN, ..Default::default() },
        ] {
            assert!(matches!(augment_once(&img, &p), Err(Error::InvalidParameter(_))));
        }
    }

    #[test]
    fn jitter_is_seeded() {
        let img = ImagePlane::constant(16, 16, 0.5).unwrap();
        let p = AugmentParams { jitter_sigma: 0.02, noise_seed: 4, ..Default::default() };
        let a = augment_once(&img, &p).unwrap();
        assert_eq!(a, augment_once(&img, &p).unwrap());
        let q = AugmentParams { noise_seed: 5, ..p };
        assert_ne!(a, augment_once(&img, &q).unwrap());
    }
}
