use serde::{Deserialize, Serialize};

use super::landmarks::{LandmarkSet, Point};
use super::BinaryMask;
use crate::error::{Error, Result};
use crate::plane::Shape;

/// Box size as fractions of image width and height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxFraction {
    pub width: f64,
    pub height: f64,
}

impl BoxFraction {
    pub const fn new(width: f64, height: f64) -> Self {
        BoxFraction { width, height }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StickerSpec {
    pub left_eye: BoxFraction,
    pub right_eye: BoxFraction,
    pub nose: BoxFraction,
    pub mouth: BoxFraction,
}

impl Default for StickerSpec {
    fn default() -> Self {
        StickerSpec {
            left_eye: BoxFraction::new(0.16, 0.10),
            right_eye: BoxFraction::new(0.16, 0.10),
            nose: BoxFraction::new(0.18, 0.22),
            mouth: BoxFraction::new(0.30, 0.12),
        }
    }
}

impl StickerSpec {
    pub fn boxes(&self) -> [BoxFraction; 4] {
        [self.left_eye, self.right_eye, self.nose, self.mouth]
    }

    pub fn validate(&self) -> Result<()> {
        for b in self.boxes() {
            for f in [b.width, b.height] {
                if !(f > 0.0 && f <= 0.6) {
                    return Err(Error::InvalidParameter(format!(
                        "sticker box fraction {f} outside (0, 0.6]"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Half-open pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl PixelBox {
    pub fn area(&self) -> usize {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }
}

fn span(center: usize, frac: f64, extent: usize) -> (usize, usize) {
    let len = ((frac * extent as f64).round() as i64).max(1);
    let start = center as i64 - len / 2;
    let end = start + len;
    (start.max(0) as usize, end.min(extent as i64).max(0) as usize)
}

fn place(p: Point, frac: BoxFraction, shape: Shape) -> PixelBox {
    let (x0, x1) = span(p.x, frac.width, shape.width);
    let (y0, y1) = span(p.y, frac.height, shape.height);
    PixelBox { x0, y0, x1, y1 }
}

/// The four landmark-centred boxes, clipped to the image.
pub fn sticker_boxes(landmarks: &LandmarkSet, spec: &StickerSpec, shape: Shape) -> Result<[PixelBox; 4]> {
    spec.validate()?;
    landmarks.validate(shape)?;
    let pts = landmarks.points();
    let fr = spec.boxes();
    Ok(std::array::from_fn(|i| place(pts[i], fr[i], shape)))
}

pub fn build_sticker_mask(landmarks: &LandmarkSet, spec: &StickerSpec, shape: Shape) -> Result<BinaryMask> {
    let boxes = sticker_boxes(landmarks, spec, shape)?;
    let mut bits = vec![false; shape.len()];
    for b in &boxes {
        for y in b.y0..b.y1 {
            for x in b.x0..b.x1 {
                let i = shape.index(y, x, 0);
                bits[i..i + shape.channels].fill(true);
            }
        }
    }
    BinaryMask::new(shape, bits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::focusing::CanonicalLandmarks;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // Independent rasterizer: a pixel is covered when its offset from the
    // landmark lies within the box's signed half-extents.
    fn oracle(landmarks: &LandmarkSet, spec: &StickerSpec, shape: Shape) -> Vec<bool> {
        let mut out = vec![false; shape.len()];
        for y in 0..shape.height {
            for x in 0..shape.width {
                let hit = landmarks.points().iter().zip(spec.boxes()).any(|(p, f)| {
                    let bw = ((f.width * shape.width as f64).round() as i64).max(1);
                    let bh = ((f.height * shape.height as f64).round() as i64).max(1);
                    let dx = x as i64 - p.x as i64;
                    let dy = y as i64 - p.y as i64;
                    dx >= -(bw / 2) && dx < bw - bw / 2 && dy >= -(bh / 2) && dy < bh - bh / 2
                });
                for c in 0..shape.channels {
                    out[(y * shape.width + x) * shape.channels + c] = hit;
                }
            }
        }
        out
    }

    #[test]
    fn default_spec_on_canonical_112() {
        let shape = Shape::new(112, 112);
        let lm = CanonicalLandmarks::for_shape(shape);
        let spec = StickerSpec::default();
        let mask = build_sticker_mask(&lm, &spec, shape).unwrap();
        assert_eq!(mask.bits(), oracle(&lm, &spec, shape).as_slice());
        let boxes = sticker_boxes(&lm, &spec, shape).unwrap();
        // Canonical boxes do not overlap, so the union is the plain sum.
        let area: usize = boxes.iter().map(PixelBox::area).sum();
        assert_eq!(mask.count(), area * 3);
    }

    #[test]
    fn rejects_degenerate_fractions() {
        let shape = Shape::new(32, 32);
        let lm = CanonicalLandmarks::for_shape(shape);
        for bad in [0.0, -0.1, 0.61, f64::NAN] {
            let mut spec = StickerSpec::default();
            spec.nose.width = bad;
            assert!(matches!(
                build_sticker_mask(&lm, &spec, shape),
                Err(Error::InvalidParameter(_))
            ));
        }
    }

    #[test]
    fn smallest_spec_gives_single_pixels() {
        let shape = Shape::new(16, 16);
        let lm = CanonicalLandmarks::for_shape(shape);
        let f = BoxFraction::new(1e-6, 1e-6);
        let spec = StickerSpec { left_eye: f, right_eye: f, nose: f, mouth: f };
        let mask = build_sticker_mask(&lm, &spec, shape).unwrap();
        assert_eq!(mask.count(), 4 * 3);
    }

    #[test]
    fn overlapping_boxes_are_unioned() {
        let shape = Shape::new(20, 20);
        let p = Point { x: 10, y: 10 };
        let lm = LandmarkSet {
            left_eye: Point { x: 9, y: 10 },
            right_eye: p,
            nose: p,
            mouth: p,
        };
        let f = BoxFraction::new(0.5, 0.5);
        let spec = StickerSpec { left_eye: f, right_eye: f, nose: f, mouth: f };
        let mask = build_sticker_mask(&lm, &spec, shape).unwrap();
        // 10x10 box at x in [5,15) and one shifted left by one pixel: 11x10.
        assert_eq!(mask.count(), 11 * 10 * 3);
    }

    #[test]
    fn random_draws_match_rasterization_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let shape = Shape::new(rng.gen_range(16..48), rng.gen_range(16..48));
            let mut pt = || Point {
                x: rng.gen_range(0..shape.width),
                y: rng.gen_range(0..shape.height),
            };
            let (a, b) = (pt(), pt());
            let (nose, mouth) = (pt(), pt());
            if a.x == b.x {
                continue;
            }
            let (left_eye, right_eye) = if a.x < b.x { (a, b) } else { (b, a) };
            let lm = LandmarkSet { left_eye, right_eye, nose, mouth };
            let mut fr = || BoxFraction::new(rng.gen_range(0.01..=0.6), rng.gen_range(0.01..=0.6));
            let spec = StickerSpec {
                left_eye: fr(),
                right_eye: fr(),
                nose: fr(),
                mouth: fr(),
            };
            let mask = build_sticker_mask(&lm, &spec, shape).unwrap();
            assert_eq!(mask.bits(), oracle(&lm, &spec, shape).as_slice());
        }
    }
}
