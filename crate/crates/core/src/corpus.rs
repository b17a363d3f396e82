//! Procedural face-like images for desk-scale experiments.
//!
//! Every identity gets a fixed set of facial parameters (tones, feature
//! sizes and offsets, a skin texture); every image of that identity redraws
//! pose, lighting, expression and sensor noise. Features sit near the
//! canonical landmark fractions so region stickers line up without a
//! detector.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plane::{ImagePlane, Shape};
use crate::types::{IdentityLabel, LabeledImage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyCorpusConfig {
    pub identities: usize,
    pub images_per_identity: usize,
    pub height: usize,
    pub width: usize,
    /// Per-image pose shift, in pixels at 32×32.
    pub max_shift: f64,
    pub noise_sigma: f64,
    pub texture_amplitude: f64,
    pub seed: u64,
}

impl Default for ToyCorpusConfig {
    fn default() -> Self {
        ToyCorpusConfig {
            identities: 40,
            images_per_identity: 10,
            height: 32,
            width: 32,
            max_shift: 1.0,
            noise_sigma: 0.05,
            texture_amplitude: 0.2,
            seed: 2024,
        }
    }
}

pub fn identity_label(i: usize) -> IdentityLabel {
    IdentityLabel::new(format!("id{i:03}")).expect("non-empty label")
}

#[derive(Debug, Clone)]
struct FaceParams {
    background: [f64; 3],
    skin: [f64; 3],
    hair: [f64; 3],
    iris: [f64; 3],
    lips: [f64; 3],
    face_rx: f64,
    face_ry: f64,
    hairline: f64,
    eye_dx: f64,
    eye_dy: f64,
    eye_r: f64,
    brow_gap: f64,
    brow_tilt: f64,
    nose_len: f64,
    nose_w: f64,
    mouth_dy: f64,
    mouth_w: f64,
    mouth_h: f64,
    texture: [(f64, f64, f64, usize); 3],
}

fn colour(rng: &mut ChaCha8Rng, lo: [f64; 3], hi: [f64; 3]) -> [f64; 3] {
    std::array::from_fn(|c| rng.gen_range(lo[c]..hi[c]))
}

impl FaceParams {
    fn sample(rng: &mut ChaCha8Rng) -> Self {
        FaceParams {
            background: colour(rng, [0.1; 3], [0.9; 3]),
            skin: colour(rng, [0.45, 0.3, 0.2], [0.9, 0.75, 0.65]),
            hair: colour(rng, [0.0; 3], [0.55, 0.45, 0.4]),
            iris: colour(rng, [0.0; 3], [0.5; 3]),
            lips: colour(rng, [0.4, 0.1, 0.1], [0.85, 0.45, 0.45]),
            face_rx: rng.gen_range(0.32..0.42),
            face_ry: rng.gen_range(0.40..0.48),
            hairline: rng.gen_range(0.14..0.30),
            eye_dx: rng.gen_range(-0.035..0.035),
            eye_dy: rng.gen_range(-0.035..0.035),
            eye_r: rng.gen_range(0.045..0.085),
            brow_gap: rng.gen_range(0.06..0.11),
            brow_tilt: rng.gen_range(-0.04..0.04),
            nose_len: rng.gen_range(0.07..0.15),
            nose_w: rng.gen_range(0.03..0.08),
            mouth_dy: rng.gen_range(-0.03..0.03),
            mouth_w: rng.gen_range(0.10..0.20),
            mouth_h: rng.gen_range(0.02..0.05),
            texture: std::array::from_fn(|_| {
                (
                    rng.gen_range(2.0..7.0),
                    rng.gen_range(0.0..std::f64::consts::TAU),
                    rng.gen_range(0.0..std::f64::consts::PI),
                    rng.gen_range(0..3),
                )
            }),
        }
    }
}

#[derive(Debug, Clone)]
struct Pose {
    dx: f64,
    dy: f64,
    brightness: f64,
    light_x: f64,
    light_y: f64,
    mouth_scale: f64,
    eye_open: f64,
}

/// `1` well inside the region, `0` outside, smooth over about one pixel.
fn soft(signed_inside: f64, px: f64) -> f64 {
    (0.5 + signed_inside / px).clamp(0.0, 1.0)
}

fn blend(base: &mut [f64; 3], over: [f64; 3], w: f64) {
    for c in 0..3 {
        base[c] = base[c] * (1.0 - w) + over[c] * w;
    }
}

fn render(p: &FaceParams, pose: &Pose, shape: Shape, texture: f64, noise: &mut impl FnMut() -> f64) -> Vec<f32> {
    let (h, w) = (shape.height as f64, shape.width as f64);
    let px = 1.0 / w.min(h);
    let mut out = Vec::with_capacity(shape.len());
    for yi in 0..shape.height {
        for xi in 0..shape.width {
            // Normalized coordinates of the pixel centre in the face frame.
            let x = (xi as f64 + 0.5) / w - pose.dx;
            let y = (yi as f64 + 0.5) / h - pose.dy;
            let mut c = p.background;

            let (fx, fy) = ((x - 0.5) / p.face_rx, (y - 0.55) / p.face_ry);
            let face_r = (fx * fx + fy * fy).sqrt();
            let face_in = soft((1.0 - face_r) * p.face_rx, px);
            let mut skin = p.skin;
            let tex: f64 = p
                .texture
                .iter()
                .map(|&(f, phase, angle, _)| {
                    (std::f64::consts::TAU * f * (x * angle.cos() + y * angle.sin()) + phase).sin()
                })
                .sum::<f64>()
                / 3.0;
            for (k, s) in skin.iter_mut().enumerate() {
                let weight = if p.texture.iter().any(|t| t.3 == k) { 1.2 } else { 0.8 };
                *s += tex * weight * texture;
            }
            blend(&mut c, skin, face_in);

            let hair_in = soft((p.hairline - y) * 1.0, px) * soft((1.05 - face_r) * p.face_rx, px);
            blend(&mut c, p.hair, hair_in);

            for side in [-1.0, 1.0] {
                let ex = 0.5 + side * (0.20 + p.eye_dx);
                let ey = 0.40 + p.eye_dy;
                let ry = p.eye_r * 0.6 * pose.eye_open;
                let d = ((x - ex) / p.eye_r).powi(2) + ((y - ey) / ry).powi(2);
                let eye_in = soft((1.0 - d.sqrt()) * ry, px);
                blend(&mut c, [0.95, 0.95, 0.92], eye_in);
                let id = ((x - ex).powi(2) + (y - ey).powi(2)).sqrt();
                blend(&mut c, p.iris, soft(ry * 0.9 - id, px) * eye_in);
                let by = ey - p.brow_gap + side * p.brow_tilt * (x - ex) / p.eye_r;
                let brow_in = soft(0.018 - (y - by).abs(), px) * soft(p.eye_r * 1.2 - (x - ex).abs(), px);
                blend(&mut c, p.hair, brow_in * 0.9);
            }

            let ny0 = 0.47;
            let ny1 = 0.58 + p.nose_len - 0.1;
            let nose_in = soft(p.nose_w / 2.0 - (x - 0.5).abs(), px)
                * soft(y - ny0, px)
                * soft(ny1 - y, px);
            let shade = p.skin.map(|v| v * 0.72);
            blend(&mut c, shade, nose_in * 0.8);

            let my = 0.78 + p.mouth_dy;
            let mw = p.mouth_w * pose.mouth_scale;
            let md = ((x - 0.5) / mw).powi(2) + ((y - my) / p.mouth_h).powi(2);
            blend(&mut c, p.lips, soft((1.0 - md.sqrt()) * p.mouth_h, px));

            let light = pose.brightness + pose.light_x * (x - 0.5) + pose.light_y * (y - 0.5);
            for v in c {
                out.push((v + light + noise()).clamp(0.0, 1.0) as f32);
            }
        }
    }
    out
}

fn rng_for(seed: u64, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// Renders image `index` of identity `identity`.
pub fn render_face(cfg: &ToyCorpusConfig, identity: usize, index: usize) -> Result<ImagePlane> {
    let shape = Shape::new(cfg.height, cfg.width);
    shape.validate()?;
    let params = FaceParams::sample(&mut rng_for(cfg.seed, identity as u64 + 1, 0));
    let mut rng = rng_for(cfg.seed, identity as u64 + 1, index as u64 + 1);
    let shift = cfg.max_shift / 32.0;
    let pose = Pose {
        dx: rng.gen_range(-shift..=shift),
        dy: rng.gen_range(-shift..=shift),
        brightness: rng.gen_range(-0.06..0.06),
        light_x: rng.gen_range(-0.08..0.08),
        light_y: rng.gen_range(-0.08..0.08),
        mouth_scale: rng.gen_range(0.85..1.15),
        eye_open: rng.gen_range(0.75..1.1),
    };
    let normal = Normal::new(0.0, cfg.noise_sigma)
        .map_err(|e| Error::InvalidParameter(format!("noise sigma: {e}")))?;
    let mut noise = || normal.sample(&mut rng);
    let data = render(&params, &pose, shape, cfg.texture_amplitude, &mut noise);
    ImagePlane::new(cfg.height, cfg.width, data)
}

/// The whole corpus, identity-major.
pub fn generate_toy_corpus(cfg: &ToyCorpusConfig) -> Result<Vec<LabeledImage>> {
    let mut out = Vec::with_capacity(cfg.identities * cfg.images_per_identity);
    for id in 0..cfg.identities {
        for k in 0..cfg.images_per_identity {
            out.push(LabeledImage::new(identity_label(id), render_face(cfg, id, k)?));
        }
    }
    Ok(out)
}

/// Writes the corpus as PNGs in the dataset layout: the first `probe_ids`
/// identities under `probe/`, the rest under `distractor/`.
pub fn write_corpus(cfg: &ToyCorpusConfig, root: impl AsRef<Path>, probe_ids: usize) -> Result<()> {
    let root = root.as_ref();
    for id in 0..cfg.identities {
        let role = if id < probe_ids { "probe" } else { "distractor" };
        let dir = root.join(role).join(identity_label(id).as_str());
        std::fs::create_dir_all(&dir).map_err(|source| Error::Persistence { path: dir.clone(), source })?;
        for k in 0..cfg.images_per_identity {
            render_face(cfg, id, k)?.save_png(dir.join(format!("{k:02}.png")))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_distinct() {
        let cfg = ToyCorpusConfig { identities: 3, images_per_identity: 2, ..Default::default() };
        let a = generate_toy_corpus(&cfg).unwrap();
        assert_eq!(a, generate_toy_corpus(&cfg).unwrap());
        assert_eq!(a.len(), 6);
        assert_ne!(a[0].image, a[1].image);
        assert_ne!(a[0].image, a[2].image);
        assert_eq!(a[2].label.as_str(), "id001");
    }

    #[test]
    fn same_identity_closer_in_pixels_than_others() {
        let cfg = ToyCorpusConfig { identities: 6, images_per_identity: 4, ..Default::default() };
        let corpus = generate_toy_corpus(&cfg).unwrap();
        let dist = |a: &ImagePlane, b: &ImagePlane| {
            a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2) as f64).sum::<f64>()
        };
        let (mut same, mut diff, mut ns, mut nd) = (0.0, 0.0, 0, 0);
        for (i, a) in corpus.iter().enumerate() {
            for b in &corpus[i + 1..] {
                if a.label == b.label {
                    same += dist(&a.image, &b.image);
                    ns += 1;
                } else {
                    diff += dist(&a.image, &b.image);
                    nd += 1;
                }
            }
        }
        assert!(same / (ns as f64) < 0.5 * diff / (nd as f64));
    }

    #[test]
    fn written_layout_scans() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ToyCorpusConfig { identities: 3, images_per_identity: 2, ..Default::default() };
        write_corpus(&cfg, dir.path(), 2).unwrap();
        let m = crate::ingestion::scan_dataset(dir.path()).unwrap();
        assert_eq!(m.entries.len(), 6);
        assert_eq!(m.identities(crate::ingestion::Role::Distractor).len(), 1);
    }
}
