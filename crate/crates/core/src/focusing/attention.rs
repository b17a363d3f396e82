use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cloak::ATTENTION_RANGE;
use crate::error::{Error, Result};
use crate::plane::Shape;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttentionConfig {
    /// Per-step cap on how far any attention element moves.
    pub z_alpha: f64,
    pub init_low: f64,
    pub init_high: f64,
    pub clamp_low: f64,
    pub clamp_high: f64,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        AttentionConfig {
            z_alpha: 1.0,
            init_low: 0.9,
            init_high: 1.1,
            clamp_low: 0.0,
            clamp_high: 2.0,
        }
    }
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<()> {
        let c = self;
        let finite = [c.z_alpha, c.init_low, c.init_high, c.clamp_low, c.clamp_high]
            .iter()
            .all(|v| v.is_finite());
        let (lo, hi) = (ATTENTION_RANGE.0 as f64, ATTENTION_RANGE.1 as f64);
        if !finite
            || c.z_alpha < 0.0
            || !(0.0 <= c.init_low && c.init_low <= c.init_high)
            || c.clamp_low > c.init_low
            || c.clamp_high < c.init_high
            || c.clamp_low < lo
            || c.clamp_high > hi
        {
            return Err(Error::InvalidParameter(format!(
                "attention config {c:?}: need z_alpha >= 0, 0 <= init_low <= init_high, \
                 clamp bounds within [{lo}, {hi}] containing the init range"
            )));
        }
        Ok(())
    }
}

/// I.i.d. uniform draws in `[init_low, init_high]`, one per tensor element.
pub fn init_attention(shape: Shape, cfg: &AttentionConfig, seed: u64) -> Result<Vec<f32>> {
    cfg.validate()?;
    if cfg.init_low == cfg.init_high {
        return Ok(vec![cfg.init_low as f32; shape.len()]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Uniform::new_inclusive(cfg.init_low, cfg.init_high);
    Ok((0..shape.len()).map(|_| dist.sample(&mut rng) as f32).collect())
}

/// `clamp(α − z_α · g / max(‖g‖∞, 1e-12), clamp_low, clamp_high)`.
pub fn update_attention(alpha: &[f32], grad: &[f64], cfg: &AttentionConfig) -> Result<Vec<f32>> {
    if alpha.len() != grad.len() {
        return Err(Error::shape(alpha.len(), grad.len()));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric("non-finite attention gradient".into()));
    }
    let scale = grad.iter().fold(0.0f64, |m, g| m.max(g.abs())).max(1e-12);
    let step = cfg.z_alpha / scale;
    Ok(alpha
        .iter()
        .zip(grad)
        .map(|(&a, &g)| (a as f64 - step * g).clamp(cfg.clamp_low, cfg.clamp_high) as f32)
        .collect())
}
