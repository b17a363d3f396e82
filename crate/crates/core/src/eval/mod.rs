//! Identification and verification protection rates, perceptual metrics and
//! robustness to post-processing.

mod metrics;
mod report;
mod transform;

pub use metrics::{psnr, ssim};
pub use report::{EvalReport, PerceptualSummary, RobustnessRow, VerificationSummary};
pub use transform::{apply_transform, TransformSpec};

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backends::FaceEmbedder;
use crate::cloak::CloakMask;
use crate::error::{Error, Result};
use crate::optimizer::apply_cloak;
use crate::plane::ImagePlane;
use crate::types::{Embedding, IdentityLabel, LabeledImage};

/// Which same-identity images are added to the gallery while a probe is scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectionRule {
    /// The identity's injectable gallery images.
    Injectable,
    /// Injectable images plus the clean versions of the identity's other probes.
    InjectableAndOtherProbes,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeGallerySplit {
    probes: Vec<LabeledImage>,
    injectable: Vec<LabeledImage>,
    distractors: Vec<LabeledImage>,
    rule: InjectionRule,
}

impl ProbeGallerySplit {
    pub fn new(
        probes: Vec<LabeledImage>,
        injectable: Vec<LabeledImage>,
        distractors: Vec<LabeledImage>,
        rule: InjectionRule,
    ) -> Result<Self> {
        if probes.is_empty() {
            return Err(Error::Evaluation("probe set is empty".into()));
        }
        let split = ProbeGallerySplit { probes, injectable, distractors, rule };
        let distractor_ids: BTreeSet<&IdentityLabel> =
            split.distractors.iter().map(|d| &d.label).collect();
        for (i, p) in split.probes.iter().enumerate() {
            if distractor_ids.contains(&p.label) {
                return Err(Error::Evaluation(format!(
                    "identity {} is both probe and distractor",
                    p.label
                )));
            }
            if split.injected_indices(i).0.is_empty() && split.injected_indices(i).1.is_empty() {
                return Err(Error::Evaluation(format!(
                    "identity {} has no injectable images",
                    p.label
                )));
            }
        }
        Ok(split)
    }

    pub fn probes(&self) -> &[LabeledImage] {
        &self.probes
    }

    pub fn injectable(&self) -> &[LabeledImage] {
        &self.injectable
    }

    pub fn distractors(&self) -> &[LabeledImage] {
        &self.distractors
    }

    pub fn rule(&self) -> InjectionRule {
        self.rule
    }

    pub fn probe_identities(&self) -> BTreeSet<&IdentityLabel> {
        self.probes.iter().map(|p| &p.label).collect()
    }

    /// Indices into `injectable` and `probes` injected while scoring probe `i`.
    fn injected_indices(&self, i: usize) -> (Vec<usize>, Vec<usize>) {
        let label = &self.probes[i].label;
        let inj = (0..self.injectable.len())
            .filter(|&j| &self.injectable[j].label == label)
            .collect();
        let others = match self.rule {
            InjectionRule::Injectable => Vec::new(),
            InjectionRule::InjectableAndOtherProbes => (0..self.probes.len())
                .filter(|&j| j != i && &self.probes[j].label == label)
                .collect(),
        };
        (inj, others)
    }
}

pub type CloakSet = BTreeMap<IdentityLabel, CloakMask>;

/// Clean embeddings of every gallery-side image, computed once.
pub struct GalleryCache {
    distractors: Vec<Embedding>,
    injectable: Vec<Embedding>,
    probes: Vec<Embedding>,
}

fn embed_all(images: &[LabeledImage], backend: &dyn FaceEmbedder) -> Result<Vec<Embedding>> {
    images.par_iter().map(|i| backend.embed(&i.image)).collect()
}

impl GalleryCache {
    pub fn build(split: &ProbeGallerySplit, backend: &dyn FaceEmbedder) -> Result<Self> {
        Ok(GalleryCache {
            distractors: embed_all(&split.distractors, backend)?,
            injectable: embed_all(&split.injectable, backend)?,
            probes: match split.rule {
                InjectionRule::Injectable => Vec::new(),
                InjectionRule::InjectableAndOtherProbes => embed_all(&split.probes, backend)?,
            },
        })
    }
}

/// The protected version of probe `i`: cloaked with its identity's cloak if
/// one exists, then post-processed.
pub fn protected_probe(
    probe: &LabeledImage,
    cloaks: &CloakSet,
    transform: Option<&TransformSpec>,
) -> Result<ImagePlane> {
    let cloaked = match cloaks.get(&probe.label) {
        Some(c) => apply_cloak(&probe.image, c)?,
        None => probe.image.clone(),
    };
    match transform {
        Some(t) => apply_transform(&cloaked, t),
        None => Ok(cloaked),
    }
}

/// For every probe, the number of static gallery images strictly closer to
/// the protected probe than its nearest injected same-identity image.
/// The probe is protected at Top-n iff this count is at least `n`.
pub fn probe_ranks(
    split: &ProbeGallerySplit,
    cache: &GalleryCache,
    cloaks: &CloakSet,
    backend: &dyn FaceEmbedder,
    transform: Option<&TransformSpec>,
) -> Result<Vec<usize>> {
    (0..split.probes.len())
        .into_par_iter()
        .map(|i| {
            let img = protected_probe(&split.probes[i], cloaks, transform)?;
            let e = backend.embed(&img)?;
            let (inj, others) = split.injected_indices(i);
            let nearest_same = inj
                .iter()
                .map(|&j| e.distance(&cache.injectable[j]))
                .chain(others.iter().map(|&j| e.distance(&cache.probes[j])))
                .fold(f64::INFINITY, f64::min);
            Ok(cache
                .distractors
                .iter()
                .filter(|d| e.distance(d) < nearest_same)
                .count())
        })
        .collect()
}

pub fn psr_from_ranks(ranks: &[usize], n: usize) -> f64 {
    let protected = ranks.iter().filter(|&&r| r >= n).count();
    100.0 * protected as f64 / ranks.len() as f64
}

pub fn top_n_psr(
    split: &ProbeGallerySplit,
    cloaks: &CloakSet,
    backend: &dyn FaceEmbedder,
    n: usize,
) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidParameter("top-n requires n >= 1".into()));
    }
    let cache = GalleryCache::build(split, backend)?;
    Ok(psr_from_ranks(&probe_ranks(split, &cache, cloaks, backend, None)?, n))
}

/// A pair is protected when the embeddings are farther apart than `threshold`.
pub fn verification_psr(
    pairs: &[(ImagePlane, ImagePlane)],
    backend: &dyn FaceEmbedder,
    threshold: f64,
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Evaluation("no verification pairs".into()));
    }
    let protected = pairs
        .par_iter()
        .map(|(a, b)| Ok(backend.embed(a)?.distance(&backend.embed(b)?) > threshold))
        .collect::<Result<Vec<bool>>>()?
        .into_iter()
        .filter(|&p| p)
        .count();
    Ok(100.0 * protected as f64 / pairs.len() as f64)
}

pub const MIN_CALIBRATION_PAIRS: usize = 100;
pub const DEFAULT_TARGET_FAR: f64 = 0.01;

/// Largest distance threshold whose false-accept rate on the impostor
/// distances stays within `target_far` (a pair is accepted when its distance
/// is at most the threshold). Separable inputs give the midpoint between the
/// supports.
pub fn calibrate_threshold_from_distances(
    genuine: &[f64],
    impostor: &[f64],
    target_far: f64,
) -> Result<f64> {
    if genuine.len() < MIN_CALIBRATION_PAIRS || impostor.len() < MIN_CALIBRATION_PAIRS {
        return Err(Error::Evaluation(format!(
            "calibration needs >= {MIN_CALIBRATION_PAIRS} genuine and impostor pairs, got {} and {}",
            genuine.len(),
            impostor.len()
        )));
    }
    if !(0.0..1.0).contains(&target_far) {
        return Err(Error::InvalidParameter(format!("target FAR {target_far} outside [0, 1)")));
    }
    if genuine.iter().chain(impostor).any(|d| !d.is_finite()) {
        return Err(Error::Numeric("non-finite calibration distance".into()));
    }
    let mut imp = impostor.to_vec();
    imp.sort_by(f64::total_cmp);
    let max_genuine = genuine.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max_genuine < imp[0] {
        return Ok((max_genuine + imp[0]) / 2.0);
    }
    let k = (target_far * imp.len() as f64).floor() as usize;
    Ok(imp[k].next_down())
}

pub fn calibrate_threshold(
    genuine_pairs: &[(ImagePlane, ImagePlane)],
    impostor_pairs: &[(ImagePlane, ImagePlane)],
    backend: &dyn FaceEmbedder,
    target_far: f64,
) -> Result<f64> {
    let dist = |pairs: &[(ImagePlane, ImagePlane)]| -> Result<Vec<f64>> {
        pairs
            .par_iter()
            .map(|(a, b)| Ok(backend.embed(a)?.distance(&backend.embed(b)?)))
            .collect()
    };
    calibrate_threshold_from_distances(&dist(genuine_pairs)?, &dist(impostor_pairs)?, target_far)
}

/// Top-n PSR of the protected probes after each transform.
pub fn robustness_sweep(
    split: &ProbeGallerySplit,
    cloaks: &CloakSet,
    backend: &dyn FaceEmbedder,
    transforms: &[TransformSpec],
    n: usize,
) -> Result<Vec<RobustnessRow>> {
    if transforms.is_empty() {
        return Ok(Vec::new());
    }
    let cache = GalleryCache::build(split, backend)?;
    transforms
        .iter()
        .map(|t| {
            let ranks = probe_ranks(split, &cache, cloaks, backend, Some(t))?;
            Ok(RobustnessRow {
                transform: *t,
                label: t.label(),
                n,
                psr: psr_from_ranks(&ranks, n),
            })
        })
        .collect()
}

/// SSIM and PSNR of every cloaked probe against its clean version.
pub fn perceptual_summary(split: &ProbeGallerySplit, cloaks: &CloakSet) -> Result<PerceptualSummary> {
    let pairs: Vec<(f64, f64)> = split
        .probes
        .par_iter()
        .filter(|p| cloaks.contains_key(&p.label))
        .map(|p| {
            let c = protected_probe(p, cloaks, None)?;
            Ok((ssim(&p.image, &c)?, psnr(&p.image, &c)?))
        })
        .collect::<Result<_>>()?;
    Ok(PerceptualSummary::from_pairs(&pairs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::BackendDescriptor;

    /// Embeds an image as its first two pixel values, normalized.
    struct PixelProbe(BackendDescriptor);

    impl PixelProbe {
        fn new() -> Self {
            PixelProbe(BackendDescriptor {
                backend_id: "pixel-probe".into(),
                input_height: 16,
                input_width: 16,
                embedding_dim: 2,
                differentiable: false,
            })
        }
    }

    impl FaceEmbedder for PixelProbe {
        fn descriptor(&self) -> &BackendDescriptor {
            &self.0
        }

        fn embed_pixels(&self, pixels: &[f64]) -> Result<Embedding> {
            Embedding::normalize(vec![pixels[0], pixels[1]])
        }
    }

    fn at_angle(label: &str, deg: f64) -> LabeledImage {
        let t = deg.to_radians();
        let (x, y) = (0.1 + 0.8 * t.cos().abs(), 0.1 + 0.8 * t.sin().abs());
        let img = ImagePlane::from_fn(16, 16, |yy, xx, c| match (yy, xx, c) {
            (0, 0, 0) => x as f32,
            (0, 0, 1) => y as f32,
            _ => 0.5,
        })
        .unwrap();
        LabeledImage::new(IdentityLabel::new(label).unwrap(), img)
    }

    #[test]
    fn hand_ranked_gallery() {
        // Probe at 10 degrees; three distractors nearer than the same-identity
        // image at 60 degrees.
        let split = ProbeGallerySplit::new(
            vec![at_angle("u", 10.0)],
            vec![at_angle("u", 60.0)],
            vec![at_angle("d1", 12.0), at_angle("d2", 20.0), at_angle("d3", 5.0), at_angle("d4", 80.0)],
            InjectionRule::Injectable,
        )
        .unwrap();
        let backend = PixelProbe::new();
        let cloaks = CloakSet::new();
        assert_eq!(top_n_psr(&split, &cloaks, &backend, 1).unwrap(), 100.0);
        assert_eq!(top_n_psr(&split, &cloaks, &backend, 3).unwrap(), 100.0);
        assert_eq!(top_n_psr(&split, &cloaks, &backend, 4).unwrap(), 0.0);
    }

    #[test]
    fn ties_count_against_protection() {
        let split = ProbeGallerySplit::new(
            vec![at_angle("u", 10.0)],
            vec![at_angle("u", 30.0)],
            vec![at_angle("d", 30.0)],
            InjectionRule::Injectable,
        )
        .unwrap();
        assert_eq!(top_n_psr(&split, &CloakSet::new(), &PixelProbe::new(), 1).unwrap(), 0.0);
    }

    #[test]
    fn other_probes_injected_under_extended_rule() {
        let probes = vec![at_angle("u", 10.0), at_angle("u", 12.0)];
        let inj = vec![at_angle("u", 70.0)];
        let dis = vec![at_angle("d", 20.0)];
        let plain = ProbeGallerySplit::new(probes.clone(), inj.clone(), dis.clone(), InjectionRule::Injectable).unwrap();
        let ext = ProbeGallerySplit::new(probes, inj, dis, InjectionRule::InjectableAndOtherProbes).unwrap();
        let b = PixelProbe::new();
        assert_eq!(top_n_psr(&plain, &CloakSet::new(), &b, 1).unwrap(), 100.0);
        assert_eq!(top_n_psr(&ext, &CloakSet::new(), &b, 1).unwrap(), 0.0);
    }

    #[test]
    fn split_invariants() {
        let p = vec![at_angle("u", 10.0)];
        assert!(ProbeGallerySplit::new(vec![], vec![], vec![], InjectionRule::Injectable).is_err());
        assert!(ProbeGallerySplit::new(p.clone(), vec![], vec![], InjectionRule::Injectable).is_err());
        assert!(ProbeGallerySplit::new(
            p.clone(),
            vec![at_angle("u", 1.0)],
            vec![at_angle("u", 2.0)],
            InjectionRule::Injectable
        )
        .is_err());
    }

    #[test]
    fn psr_arithmetic_and_monotone_in_n() {
        let ranks = [0, 1, 2, 5, 7, 9, 3, 0, 6, 8];
        assert_eq!(psr_from_ranks(&ranks, 1), 80.0);
        assert_eq!(psr_from_ranks(&ranks, 5), 50.0);
        let seven = [1, 1, 1, 1, 1, 1, 1, 0, 0, 0];
        assert_eq!(psr_from_ranks(&seven, 1), 70.0);
    }

    #[test]
    fn verification_geometry() {
        let b = PixelProbe::new();
        let a = at_angle("x", 0.0).image;
        let o = at_angle("x", 90.0).image;
        assert_eq!(verification_psr(&[(a.clone(), a.clone())], &b, 0.5).unwrap(), 0.0);
        assert_eq!(verification_psr(&[(a, o)], &b, 0.5).unwrap(), 100.0);
        assert!(verification_psr(&[], &b, 0.5).is_err());
    }

    #[test]
    fn orthogonal_unit_vectors_beyond_unit_threshold() {
        let e1 = Embedding::from_unit(vec![1.0, 0.0]).unwrap();
        let e2 = Embedding::from_unit(vec![0.0, 1.0]).unwrap();
        assert!((e1.distance(&e2) - 2f64.sqrt()).abs() < 1e-12);
        assert!(e1.distance(&e2) > 1.0);
    }

    // Exhaustive oracle: among all candidate thresholds (each distance and
    // its predecessor), the largest whose FAR stays within target.
    fn brute_force(impostor: &[f64], target: f64) -> f64 {
        let far = |t: f64| impostor.iter().filter(|&&d| d <= t).count() as f64 / impostor.len() as f64;
        impostor
            .iter()
            .flat_map(|&d| [d, d.next_down()])
            .filter(|&t| far(t) <= target)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn calibration_cases() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let genuine: Vec<f64> = (0..150).map(|_| rng.gen_range(0.2..0.9)).collect();
        let impostor: Vec<f64> = (0..200).map(|_| rng.gen_range(1.0..1.4)).collect();
        let min_imp = impostor.iter().copied().fold(f64::INFINITY, f64::min);
        let max_gen = genuine.iter().copied().fold(0.0, f64::max);
        assert_eq!(
            calibrate_threshold_from_distances(&genuine, &impostor, 0.01).unwrap(),
            (min_imp + max_gen) / 2.0
        );

        for seed in 0..20 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let genuine: Vec<f64> = (0..120).map(|_| rng.gen_range(0.2..1.1)).collect();
            let mut impostor: Vec<f64> = (0..130).map(|_| rng.gen_range(0.8..1.5)).collect();
            impostor[3] = impostor[7];
            for target in [0.0, 0.01, 0.05, 0.2] {
                let t = calibrate_threshold_from_distances(&genuine, &impostor, target).unwrap();
                assert_eq!(t, brute_force(&impostor, target));
            }
            let t0 = calibrate_threshold_from_distances(&genuine, &impostor, 0.0).unwrap();
            let min_imp = impostor.iter().copied().fold(f64::INFINITY, f64::min);
            assert_eq!(t0, min_imp.next_down());
        }
        assert!(calibrate_threshold_from_distances(&[0.1; 99], &[1.0; 100], 0.01).is_err());
    }

    #[test]
    fn empty_transform_list_gives_empty_table() {
        let split = ProbeGallerySplit::new(
            vec![at_angle("u", 10.0)],
            vec![at_angle("u", 30.0)],
            vec![at_angle("d", 50.0)],
            InjectionRule::Injectable,
        )
        .unwrap();
        let rows = robustness_sweep(&split, &CloakSet::new(), &PixelProbe::new(), &[], 1).unwrap();
        assert!(rows.is_empty());
    }
}
