//! Anchor selection, the contrastive loss, and the attention-weighted
//! projected sign-gradient loop that produces an identity-specific cloak.

mod anchors;

pub use anchors::{contrastive_loss, select_anchors, Anchor, AnchorObjective, AnchorPair, AnchorPool};

use serde::{Deserialize, Deserializer, Serialize};
use sha2::{Digest, Sha256};

use crate::backends::FaceEmbedder;
use crate::cloak::{BudgetMap, CloakMask};
use crate::error::{Error, Result};
use crate::focusing::{
    build_highpass_mask, build_sticker_mask, combine_budget, init_attention, update_attention,
    AttentionConfig, BinaryMask, CanonicalLandmarks, HighPassConfig, LandmarkDetector, StickerSpec,
};
use crate::plane::ImagePlane;
use crate::synthgen::{VariantSet, DEFAULT_VARIANTS};

/// Parses `"8/255"`, `"0.03"` or similar into a number.
pub fn parse_fraction(text: &str) -> Result<f64> {
    let bad = || Error::InvalidParameter(format!("cannot parse {text:?} as a number or a/b"));
    let value = match text.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|_| bad())?;
            let b: f64 = b.trim().parse().map_err(|_| bad())?;
            a / b
        }
        None => text.trim().parse().map_err(|_| bad())?,
    };
    if value.is_finite() {
        Ok(value)
    } else {
        Err(bad())
    }
}

/// Accepts either a number or a fraction string such as `"8/255"`.
pub fn deserialize_fraction<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Text(String),
    }
    match Raw::deserialize(d)? {
        Raw::Num(v) => Ok(v),
        Raw::Text(s) => parse_fraction(&s).map_err(serde::de::Error::custom),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    #[serde(deserialize_with = "deserialize_fraction")]
    pub eps: f64,
    #[serde(deserialize_with = "deserialize_fraction")]
    pub eps_a: f64,
    #[serde(deserialize_with = "deserialize_fraction")]
    pub step: f64,
    pub iterations: usize,
    pub n_variants: usize,
    pub use_sticker: bool,
    pub use_highpass: bool,
    pub use_attention: bool,
    pub attention: AttentionConfig,
    pub highpass: HighPassConfig,
    pub sticker: StickerSpec,
    pub rng_seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            eps: 8.0 / 255.0,
            eps_a: 32.0 / 255.0,
            step: 2.0 / 255.0,
            iterations: 10,
            n_variants: DEFAULT_VARIANTS,
            use_sticker: true,
            use_highpass: true,
            use_attention: true,
            attention: AttentionConfig::default(),
            highpass: HighPassConfig::default(),
            sticker: StickerSpec::default(),
            rng_seed: 0,
        }
    }
}

impl OptimizerConfig {
    /// Requires `0 < step`, `0 <= eps <= eps_a <= 0.5`, `step <= eps` unless
    /// the budget is zero, and at least one iteration and variant.
    pub fn validate(&self) -> Result<()> {
        let finite = [self.eps, self.eps_a, self.step].iter().all(|v| v.is_finite());
        if !finite
            || self.step <= 0.0
            || self.eps < 0.0
            || self.eps > self.eps_a
            || self.eps_a > 0.5
            || (self.eps > 0.0 && self.step > self.eps)
        {
            return Err(Error::InvalidParameter(format!(
                "need 0 < step <= eps <= eps_a <= 0.5, got step {}, eps {}, eps_a {}",
                self.step, self.eps, self.eps_a
            )));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidParameter("iterations must be >= 1".into()));
        }
        if self.n_variants == 0 {
            return Err(Error::InvalidParameter("n_variants must be >= 1".into()));
        }
        self.attention.validate()?;
        self.highpass.validate()?;
        self.sticker.validate()
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config is serializable");
        hex::encode(Sha256::digest(json))
    }
}

/// Element-wise clamp of `weighted` into `[-budget, +budget]`.
pub fn project(weighted: &[f32], budget: &BudgetMap) -> Result<Vec<f32>> {
    if weighted.len() != budget.values().len() {
        return Err(Error::shape(budget.values().len(), weighted.len()));
    }
    Ok(weighted
        .iter()
        .zip(budget.values())
        .map(|(&v, &b)| v.clamp(-b, b))
        .collect())
}

/// `clamp(image + delta, 0, 1)`.
pub fn apply_cloak(image: &ImagePlane, cloak: &CloakMask) -> Result<ImagePlane> {
    image.shape().ensure_eq(&cloak.shape())?;
    let data = image
        .data()
        .iter()
        .zip(cloak.delta())
        .map(|(&p, &d)| (p + d).clamp(0.0, 1.0))
        .collect();
    ImagePlane::new(image.height(), image.width(), data)
}

/// Budget map for a seed image under the enabled focusing mechanisms.
pub fn budget_for_seed(
    seed: &ImagePlane,
    cfg: &OptimizerConfig,
    detector: &dyn LandmarkDetector,
) -> Result<BudgetMap> {
    let shape = seed.shape();
    let sticker = if cfg.use_sticker {
        build_sticker_mask(&detector.detect(seed)?, &cfg.sticker, shape)?
    } else {
        BinaryMask::empty(shape)
    };
    let highpass = if cfg.use_highpass {
        build_highpass_mask(seed, &cfg.highpass)?
    } else {
        BinaryMask::empty(shape)
    };
    combine_budget(&sticker, &highpass, cfg.eps, cfg.eps_a)
}

pub fn optimize_cloak(
    variants: &VariantSet,
    anchors: &AnchorPair,
    backend: &dyn FaceEmbedder,
    cfg: &OptimizerConfig,
) -> Result<CloakMask> {
    optimize_cloak_with(variants, anchors, backend, cfg, &CanonicalLandmarks)
}

fn sign(v: f64) -> f32 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Runs the optimization with an explicit landmark detector.
///
/// Each iteration forms `clamp(S_i + Π(δ⊙α), 0, 1)` for the seed and every
/// variant, averages the loss gradient over them, and takes a sign step on
/// `δ`. Gradients flow only where neither the projection nor the pixel clamp
/// is saturated (bounds inclusive).
pub fn optimize_cloak_with(
    variants: &VariantSet,
    anchors: &AnchorPair,
    backend: &dyn FaceEmbedder,
    cfg: &OptimizerConfig,
    detector: &dyn LandmarkDetector,
) -> Result<CloakMask> {
    cfg.validate()?;
    let desc = backend.descriptor();
    if !desc.differentiable {
        return Err(backend.no_gradient());
    }
    let seed = &variants.seed;
    let shape = seed.shape();
    backend.check_shape(shape)?;
    let images = variants.optimization_images();
    let budget = budget_for_seed(seed, cfg, detector)?;
    let len = shape.len();
    let step = cfg.step as f32;
    let objective = AnchorObjective::new(anchors);

    let mut delta = vec![0.0f32; len];
    let mut alpha = if cfg.use_attention {
        init_attention(shape, &cfg.attention, cfg.rng_seed)?
    } else {
        vec![1.0f32; len]
    };

    for t in 1..=cfg.iterations {
        let weighted: Vec<f32> = delta.iter().zip(&alpha).map(|(d, a)| d * a).collect();
        let perturbation = project(&weighted, &budget)?;
        let mut grad = vec![0.0f64; len];
        let mut loss = 0.0;
        for img in &images {
            let x: Vec<f32> = img
                .data()
                .iter()
                .zip(&perturbation)
                .map(|(s, p)| s + p)
                .collect();
            let pixels: Vec<f64> = x.iter().map(|&v| v.clamp(0.0, 1.0) as f64).collect();
            let (value, g) = backend.objective_and_gradient(&pixels, &objective)?;
            loss += value;
            for ((acc, gi), xi) in grad.iter_mut().zip(&g).zip(&x) {
                if (0.0..=1.0).contains(xi) {
                    *acc += gi;
                }
            }
        }
        let n = images.len() as f64;
        loss /= n;
        if !loss.is_finite() {
            return Err(Error::Optimization {
                iteration: t,
                reason: format!("non-finite loss {loss}"),
            });
        }
        for ((g, w), b) in grad.iter_mut().zip(&weighted).zip(budget.values()) {
            *g = if w.abs() <= *b { *g / n } else { 0.0 };
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Optimization {
                iteration: t,
                reason: "non-finite gradient".into(),
            });
        }
        let grad_alpha: Vec<f64> = grad.iter().zip(&delta).map(|(g, &d)| g * d as f64).collect();
        for ((d, g), a) in delta.iter_mut().zip(&grad).zip(&alpha) {
            *d -= step * sign(g * *a as f64);
        }
        if cfg.use_attention {
            alpha = update_attention(&alpha, &grad_alpha, &cfg.attention)?;
        }
        let max_delta = delta.iter().fold(0.0f32, |m, d| m.max(d.abs()));
        tracing::info!(iteration = t, loss, max_abs_delta = max_delta, "cloak step");
    }

    let weighted: Vec<f32> = delta.iter().zip(&alpha).map(|(d, a)| d * a).collect();
    let stored = project(&weighted, &budget)?;
    CloakMask::new(
        stored,
        alpha,
        budget,
        desc.backend_id.clone(),
        seed.payload_sha256(),
        cfg.digest(),
    )
}
