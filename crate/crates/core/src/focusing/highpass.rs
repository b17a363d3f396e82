use serde::{Deserialize, Serialize};

use super::BinaryMask;
use crate::error::{Error, Result};
use crate::plane::{ImagePlane, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HighPassConfig {
    /// Gaussian standard deviation in pixels.
    pub sigma: f64,
    /// Threshold on the normalized response.
    pub mu: f64,
    /// Kernel truncation radius in pixels.
    pub radius: usize,
}

impl Default for HighPassConfig {
    fn default() -> Self {
        HighPassConfig {
            sigma: 2.0,
            mu: 1.0,
            radius: 6,
        }
    }
}

impl HighPassConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma {} must be > 0", self.sigma)));
        }
        let min_radius = (3.0 * self.sigma).ceil() as usize;
        if self.radius < min_radius {
            return Err(Error::InvalidParameter(format!(
                "kernel radius {} below 3*sigma rounded up ({min_radius})",
                self.radius
            )));
        }
        if !self.mu.is_finite() {
            return Err(Error::InvalidParameter(format!("mu {} must be finite", self.mu)));
        }
        Ok(())
    }

    pub(crate) fn kernel(&self) -> Vec<f64> {
        let r = self.radius as i64;
        let raw: Vec<f64> = (-r..=r)
            .map(|i| (-((i * i) as f64) / (2.0 * self.sigma * self.sigma)).exp())
            .collect();
        let sum: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / sum).collect()
    }
}

/// Mirror an out-of-range index back inside `[0, n)` without repeating the edge.
pub(crate) fn reflect(i: i64, n: usize) -> usize {
    let n = n as i64;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - m }) as usize
}

fn blur_channel(src: &[f64], h: usize, w: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as i64;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * src[y * w + reflect(x as i64 + k as i64 - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * tmp[reflect(y as i64 + k as i64 - r, h) * w + x])
                .sum();
        }
    }
    out
}

/// Gaussian high-pass residual, standardized per channel.
///
/// Channels whose residual is flat (std below 1e-8) map to zero.
pub fn high_pass(image: &ImagePlane, cfg: &HighPassConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let shape = image.shape();
    let (h, w, ch) = (shape.height, shape.width, shape.channels);
    let kernel = cfg.kernel();
    let data = image.data();
    let mut out = vec![0.0; shape.len()];
    for c in 0..ch {
        let plane: Vec<f64> = (0..h * w).map(|i| data[i * ch + c] as f64).collect();
        let blurred = blur_channel(&plane, h, w, &kernel);
        let resid: Vec<f64> = plane.iter().zip(&blurred).map(|(a, b)| a - b).collect();
        let n = resid.len() as f64;
        let mean = resid.iter().sum::<f64>() / n;
        let var = resid.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        if std < 1e-8 {
            continue;
        }
        for (i, r) in resid.iter().enumerate() {
            out[i * ch + c] = (r - mean) / std;
        }
    }
    Ok(out)
}

pub fn build_highpass_mask(image: &ImagePlane, cfg: &HighPassConfig) -> Result<BinaryMask> {
    let response = high_pass(image, cfg)?;
    threshold(image.shape(), &response, cfg.mu)
}

pub(crate) fn threshold(shape: Shape, response: &[f64], mu: f64) -> Result<BinaryMask> {
    BinaryMask::new(shape, response.iter().map(|&v| v > mu).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(h: usize, w: usize, seed: u64) -> ImagePlane {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImagePlane::new(h, w, (0..h * w * 3).map(|_| rng.gen::<f32>()).collect()).unwrap()
    }

    // Direct 2-D convolution with an explicitly built 2-D kernel.
    fn oracle_residual(image: &ImagePlane, cfg: &HighPassConfig, c: usize) -> Vec<f64> {
        let (h, w) = (image.height(), image.width());
        let r = cfg.radius as i64;
        let mut k2 = Vec::new();
        let mut total = 0.0;
        for dy in -r..=r {
            for dx in -r..=r {
                let v = (-((dx * dx + dy * dy) as f64) / (2.0 * cfg.sigma * cfg.sigma)).exp();
                k2.push((dy, dx, v));
                total += v;
            }
        }
        let mirror = |i: i64, n: i64| -> usize {
            let mut i = i;
            while i < 0 || i >= n {
                i = if i < 0 { -i } else { 2 * (n - 1) - i };
            }
            i as usize
        };
        let mut out = Vec::with_capacity(h * w);
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let blurred: f64 = k2
                    .iter()
                    .map(|&(dy, dx, v)| {
                        v / total
                            * image.get(mirror(y + dy, h as i64), mirror(x + dx, w as i64), c) as f64
                    })
                    .sum();
                out.push(image.get(y as usize, x as usize, c) as f64 - blurred);
            }
        }
        out
    }

    fn standardize(v: &[f64]) -> Vec<f64> {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let s = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt();
        v.iter().map(|x| (x - m) / s).collect()
    }

    #[test]
    fn constant_image_is_all_zero() {
        let img = ImagePlane::constant(20, 20, 0.4).unwrap();
        let cfg = HighPassConfig::default();
        assert!(high_pass(&img, &cfg).unwrap().iter().all(|&v| v == 0.0));
        assert_eq!(build_highpass_mask(&img, &cfg).unwrap().count(), 0);
    }

    #[test]
    fn impulse_matches_direct_convolution() {
        let mut data = vec![0.0f32; 24 * 24 * 3];
        data[(10 * 24 + 7) * 3 + 1] = 1.0;
        let img = ImagePlane::new(24, 24, data).unwrap();
        let cfg = HighPassConfig::default();
        let got = high_pass(&img, &cfg).unwrap();
        let expected = standardize(&oracle_residual(&img, &cfg, 1));
        for (i, e) in expected.iter().enumerate() {
            assert!((got[i * 3 + 1] - e).abs() < 1e-6);
        }
        assert!(got.iter().enumerate().filter(|(i, _)| i % 3 != 1).all(|(_, &v)| v == 0.0));
    }

    #[test]
    fn random_image_matches_oracle_and_mask_at_zero() {
        let img = random_image(17, 21, 4);
        let cfg = HighPassConfig { mu: 0.0, ..Default::default() };
        let got = high_pass(&img, &cfg).unwrap();
        let mask = build_highpass_mask(&img, &cfg).unwrap();
        for c in 0..3 {
            let expected = standardize(&oracle_residual(&img, &cfg, c));
            for (i, e) in expected.iter().enumerate() {
                assert!((got[i * 3 + c] - e).abs() < 1e-6);
                assert_eq!(mask.bits()[i * 3 + c], *e > 0.0);
            }
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let img = random_image(16, 16, 1);
        for cfg in [
            HighPassConfig { sigma: 0.0, ..Default::default() },
            HighPassConfig { radius: 5, ..Default::default() },
            HighPassConfig { mu: f64::NEG_INFINITY, ..Default::default() },
        ] {
            assert!(matches!(high_pass(&img, &cfg), Err(Error::InvalidParameter(_))));
        }
    }

    #[test]
    fn reflect_is_mirror_without_edge_repeat() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(-4, 5), 4);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(9, 5), 1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn normalized_per_channel(seed in any::<u64>(), h in 16usize..28, w in 16usize..28) {
            let img = random_image(h, w, seed);
            let out = high_pass(&img, &HighPassConfig::default()).unwrap();
            for c in 0..3 {
                let vals: Vec<f64> = out.iter().skip(c).step_by(3).copied().collect();
                let n = vals.len() as f64;
                let m = vals.iter().sum::<f64>() / n;
                let s = (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
                prop_assert!(m.abs() < 1e-6);
                prop_assert!((s - 1.0).abs() < 1e-6);
            }
        }

        #[test]
        fn mask_antitone_in_mu(seed in any::<u64>(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let img = random_image(16, 16, seed);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let m_lo = build_highpass_mask(&img, &HighPassConfig { mu: lo, ..Default::default() }).unwrap();
            let m_hi = build_highpass_mask(&img, &HighPassConfig { mu: hi, ..Default::default() }).unwrap();
            prop_assert!(m_hi.is_subset_of(&m_lo));
        }
    }
}
