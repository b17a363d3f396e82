//! Perturbation focusing: boosted-budget regions around facial features,
//! boosted budget on high-frequency pixels, and a learnable per-element
//! attention map that modulates the perturbation.

mod attention;
mod highpass;
mod landmarks;
mod sticker;

pub use attention::{init_attention, update_attention, AttentionConfig};
pub use highpass::{build_highpass_mask, high_pass, HighPassConfig};
pub(crate) use highpass::reflect;
pub use landmarks::{
    parse_landmark_response, CanonicalLandmarks, HttpLandmarkDetector, LandmarkDetector,
    LandmarkSet, Point,
};
pub use sticker::{build_sticker_mask, sticker_boxes, BoxFraction, PixelBox, StickerSpec};

use crate::cloak::BudgetMap;
use crate::error::{Error, Result};
use crate::plane::Shape;

/// Per-element boolean mask over an H×W×C tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    shape: Shape,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(shape: Shape, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != shape.len() {
            return Err(Error::shape(format!("{} mask bits", shape.len()), bits.len()));
        }
        Ok(BinaryMask { shape, bits })
    }

    pub fn empty(shape: Shape) -> Self {
        BinaryMask {
            shape,
            bits: vec![false; shape.len()],
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.shape == other.shape && self.bits.iter().zip(&other.bits).all(|(a, b)| !a || *b)
    }
}

/// Boosted budget wherever either mask is set, base budget elsewhere.
pub fn combine_budget(
    sticker: &BinaryMask,
    highpass: &BinaryMask,
    eps: f64,
    eps_a: f64,
) -> Result<BudgetMap> {
    sticker.shape.ensure_eq(&highpass.shape)?;
    let (base, boosted) = (eps as f32, eps_a as f32);
    let values = sticker
        .bits
        .iter()
        .zip(&highpass.bits)
        .map(|(&s, &h)| if s || h { boosted } else { base })
        .collect();
    BudgetMap::new(sticker.shape, values, eps, eps_a)
}
