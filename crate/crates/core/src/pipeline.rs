//! End-to-end wiring: variants → anchors → optimization per identity, then
//! evaluation. Also hosts the seeded desk rig built on the procedural corpus.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backends::{train_toy_backend, FaceEmbedder, ToyBackend, ToyBackendWeights, ToyTrainingConfig};
use crate::cloak::CloakMask;
use crate::corpus::{generate_toy_corpus, ToyCorpusConfig};
use crate::error::{Error, Result};
use crate::eval::{
    calibrate_threshold, perceptual_summary, probe_ranks, protected_probe, psr_from_ranks,
    robustness_sweep, verification_psr, CloakSet, EvalReport, GalleryCache, InjectionRule,
    ProbeGallerySplit, TransformSpec, VerificationSummary, DEFAULT_TARGET_FAR,
};
use crate::focusing::{CanonicalLandmarks, LandmarkDetector};
use crate::optimizer::{optimize_cloak_with, select_anchors, AnchorPair, AnchorPool, OptimizerConfig};
use crate::plane::ImagePlane;
use crate::synthgen::{generate_variants, GeneratorConfig};
use crate::types::{IdentityLabel, LabeledImage};

/// Per-identity RNG seed derived from the run seed and the label, so a
/// cloak does not depend on which other identities share the run.
pub fn identity_seed(rng_seed: u64, label: &IdentityLabel) -> u64 {
    let h = Sha256::digest(label.as_str().as_bytes());
    let mut b = [0u8; 8];
    b.copy_from_slice(&h[..8]);
    rng_seed ^ u64::from_le_bytes(b)
}

#[derive(Debug, Clone)]
pub struct CloakOutcome {
    pub cloak: CloakMask,
    pub anchors: AnchorPair,
}

/// Builds one identity's cloak from its seed image.
pub fn make_cloak(
    label: &IdentityLabel,
    seed: &ImagePlane,
    backend: &dyn FaceEmbedder,
    pool: &AnchorPool,
    cfg: &OptimizerConfig,
    generator: &GeneratorConfig,
    detector: &dyn LandmarkDetector,
) -> Result<CloakOutcome> {
    cfg.validate()?;
    let pool = if pool.entries().iter().any(|(l, _)| l == label) {
        pool.excluding(label)?
    } else {
        pool.clone()
    };
    let rng_seed = identity_seed(cfg.rng_seed, label);
    let variants = generate_variants(seed, cfg.n_variants, generator, rng_seed)?;
    let anchors = select_anchors(&backend.embed(seed)?, &pool)?;
    let per_id = OptimizerConfig { rng_seed, ..cfg.clone() };
    let mut cloak = optimize_cloak_with(&variants, &anchors, backend, &per_id, detector)?;
    // Record the run-level config, not the per-identity seed derived from it.
    cloak.config_digest = cfg.digest();
    Ok(CloakOutcome { cloak, anchors })
}

/// One cloak per `(label, seed)` job, run in parallel across identities.
pub fn make_cloaks(
    jobs: &[(IdentityLabel, ImagePlane)],
    backend: &dyn FaceEmbedder,
    pool: &AnchorPool,
    cfg: &OptimizerConfig,
    generator: &GeneratorConfig,
) -> Result<CloakSet> {
    let outcomes: Vec<(IdentityLabel, CloakMask)> = jobs
        .par_iter()
        .map(|(label, seed)| {
            let _span = tracing::info_span!("cloak", identity = %label).entered();
            let out = make_cloak(label, seed, backend, pool, cfg, generator, &CanonicalLandmarks)?;
            Ok((label.clone(), out.cloak))
        })
        .collect::<Result<_>>()?;
    Ok(outcomes.into_iter().collect())
}

/// Anchor pool of every image embedding in `images`.
pub fn pool_from_images(images: &[LabeledImage], backend: &dyn FaceEmbedder, source: &str) -> Result<AnchorPool> {
    let entries = images
        .par_iter()
        .map(|i| Ok((i.label.clone(), backend.embed(&i.image)?)))
        .collect::<Result<Vec<_>>>()?;
    AnchorPool::new(entries, source)
}

/// Genuine and impostor image pairs over a labeled set, in a fixed order.
pub fn calibration_pairs(images: &[LabeledImage]) -> (Vec<(ImagePlane, ImagePlane)>, Vec<(ImagePlane, ImagePlane)>) {
    let (mut genuine, mut impostor) = (Vec::new(), Vec::new());
    for (i, a) in images.iter().enumerate() {
        for b in &images[i + 1..] {
            let pair = (a.image.clone(), b.image.clone());
            if a.label == b.label {
                genuine.push(pair);
            } else {
                impostor.push(pair);
            }
        }
    }
    (genuine, impostor)
}

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    pub robustness: Vec<TransformSpec>,
    /// Calibrate a verification threshold on these images (pairs drawn
    /// within the set) and score probes against injectable images.
    pub verification_set: Option<Vec<LabeledImage>>,
    pub target_far: Option<f64>,
}

pub fn evaluate(
    split: &ProbeGallerySplit,
    cloaks: &CloakSet,
    backend: &dyn FaceEmbedder,
    config_digest: &str,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let cache = GalleryCache::build(split, backend)?;
    let ranks = probe_ranks(split, &cache, cloaks, backend, None)?;
    let verification = match &opts.verification_set {
        Some(set) => Some(verification_summary(split, cloaks, backend, set, opts.target_far.unwrap_or(DEFAULT_TARGET_FAR))?),
        None => None,
    };
    Ok(EvalReport {
        config_digest: config_digest.to_string(),
        backend_id: backend.descriptor().backend_id.clone(),
        probes: split.probes().len(),
        cloaked_identities: split.probe_identities().iter().filter(|l| cloaks.contains_key(**l)).count(),
        top1_psr: psr_from_ranks(&ranks, 1),
        top5_psr: psr_from_ranks(&ranks, 5),
        verification,
        perceptual: perceptual_summary(split, cloaks)?,
        robustness: robustness_sweep(split, cloaks, backend, &opts.robustness, 1)?,
    })
}

fn verification_summary(
    split: &ProbeGallerySplit,
    cloaks: &CloakSet,
    backend: &dyn FaceEmbedder,
    calibration_set: &[LabeledImage],
    target_far: f64,
) -> Result<VerificationSummary> {
    let (genuine, impostor) = calibration_pairs(calibration_set);
    let threshold = calibrate_threshold(&genuine, &impostor, backend, target_far)?;
    let mut protected_pairs = Vec::new();
    let mut clean_pairs = Vec::new();
    for p in split.probes() {
        let prot = protected_probe(p, cloaks, None)?;
        for g in split.injectable().iter().filter(|g| g.label == p.label) {
            protected_pairs.push((prot.clone(), g.image.clone()));
            clean_pairs.push((p.image.clone(), g.image.clone()));
        }
    }
    Ok(VerificationSummary {
        threshold,
        target_far,
        pairs: protected_pairs.len(),
        psr: verification_psr(&protected_pairs, backend, threshold)?,
        clean_false_protection: verification_psr(&clean_pairs, backend, threshold)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    Eps,
    Iterations,
    NVariants,
}

impl std::str::FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eps" => Ok(AblationAxis::Eps),
            "iterations" => Ok(AblationAxis::Iterations),
            "n_variants" | "n-variants" | "variants" => Ok(AblationAxis::NVariants),
            other => Err(Error::InvalidParameter(format!(
                "unknown ablation axis {other:?} (expected eps, iterations or n_variants)"
            ))),
        }
    }
}

impl AblationAxis {
    pub fn name(self) -> &'static str {
        match self {
            AblationAxis::Eps => "eps",
            AblationAxis::Iterations => "iterations",
            AblationAxis::NVariants => "n_variants",
        }
    }

    /// `base` with this axis set to `value`. Lowering eps below the step
    /// also lowers the step to keep the config valid.
    pub fn apply(self, base: &OptimizerConfig, value: f64) -> Result<OptimizerConfig> {
        let mut cfg = base.clone();
        let as_count = |v: f64| -> Result<usize> {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::InvalidParameter(format!("{} value {v} must be a positive integer", self.name())))
            }
        };
        match self {
            AblationAxis::Eps => {
                cfg.eps = value;
                cfg.eps_a = cfg.eps_a.max(value);
                if value > 0.0 {
                    cfg.step = cfg.step.min(value);
                }
            }
            AblationAxis::Iterations => cfg.iterations = as_count(value)?,
            AblationAxis::NVariants => cfg.n_variants = as_count(value)?,
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub axis_value: f64,
    pub top1: f64,
    pub top5: f64,
    pub ssim: f64,
    pub psnr: f64,
    pub config_digest: String,
}

pub fn ablation_csv(axis: AblationAxis, rows: &[AblationRow]) -> String {
    let mut out = format!("axis,axis_value,top1,top5,ssim,psnr,config_digest\n");
    for r in rows {
        let psnr = if r.psnr.is_finite() { format!("{}", r.psnr) } else { "inf".into() };
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            axis.name(),
            r.axis_value,
            r.top1,
            r.top5,
            r.ssim,
            psnr,
            r.config_digest
        ));
    }
    out
}

/// Runs cloak generation plus evaluation once per axis value.
pub fn ablate(
    axis: AblationAxis,
    values: &[f64],
    base: &OptimizerConfig,
    generator: &GeneratorConfig,
    jobs: &[(IdentityLabel, ImagePlane)],
    split: &ProbeGallerySplit,
    backend: &dyn FaceEmbedder,
    pool: &AnchorPool,
) -> Result<Vec<AblationRow>> {
    if values.is_empty() {
        return Err(Error::InvalidParameter("ablation needs at least one value".into()));
    }
    let configs = values.iter().map(|&v| axis.apply(base, v)).collect::<Result<Vec<_>>>()?;
    configs
        .iter()
        .zip(values)
        .map(|(cfg, &v)| {
            let cloaks = make_cloaks(jobs, backend, pool, cfg, generator)?;
            let report = evaluate(split, &cloaks, backend, &cfg.digest(), &EvalOptions::default())?;
            tracing::info!(axis = axis.name(), value = v, top1 = report.top1_psr, "ablation row");
            Ok(AblationRow {
                axis_value: v,
                top1: report.top1_psr,
                top5: report.top5_psr,
                ssim: report.perceptual.ssim_mean,
                psnr: report.perceptual.psnr_mean,
                config_digest: cfg.digest(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeskRigConfig {
    pub corpus: ToyCorpusConfig,
    pub training: ToyTrainingConfig,
    /// The first `users` identities get cloaks; the rest are distractors.
    pub users: usize,
    /// Index of the image each user cloaks from.
    pub seed_index: usize,
}

impl Default for DeskRigConfig {
    fn default() -> Self {
        DeskRigConfig {
            corpus: ToyCorpusConfig::default(),
            training: ToyTrainingConfig::default(),
            users: 30,
            seed_index: 0,
        }
    }
}

/// Trained toy backend plus the user/distractor split of the toy corpus.
///
/// Users' held-out images are the probes, their training images are the
/// injected gallery entries, and every distractor image sits in the static
/// gallery and the anchor pool.
pub struct DeskRig {
    pub backend: ToyBackend,
    pub split: ProbeGallerySplit,
    pub jobs: Vec<(IdentityLabel, ImagePlane)>,
    pub pool: AnchorPool,
}

impl DeskRig {
    pub fn build(cfg: &DeskRigConfig) -> Result<Self> {
        let corpus = generate_toy_corpus(&cfg.corpus)?;
        let weights = train_toy_backend(&corpus, &cfg.training)?;
        Self::with_weights(cfg, weights)
    }

    pub fn with_weights(cfg: &DeskRigConfig, weights: ToyBackendWeights) -> Result<Self> {
        let c = &cfg.corpus;
        if cfg.users == 0 || cfg.users >= c.identities {
            return Err(Error::InvalidParameter(format!(
                "users must be in 1..{}, got {}",
                c.identities, cfg.users
            )));
        }
        let holdout = cfg.training.holdout_per_identity;
        if holdout == 0 || holdout >= c.images_per_identity || cfg.seed_index >= c.images_per_identity - holdout {
            return Err(Error::InvalidParameter(
                "seed image must come from the non-held-out images".into(),
            ));
        }
        let corpus = generate_toy_corpus(c)?;
        let backend = ToyBackend::new(weights);
        let per = c.images_per_identity;
        let mut probes = Vec::new();
        let mut injectable = Vec::new();
        let mut distractors = Vec::new();
        let mut jobs = Vec::new();
        for (i, item) in corpus.into_iter().enumerate() {
            let (id, k) = (i / per, i % per);
            if id >= cfg.users {
                distractors.push(item);
                continue;
            }
            if k == cfg.seed_index {
                jobs.push((item.label.clone(), item.image.clone()));
            }
            if k >= per - holdout {
                probes.push(item);
            } else {
                injectable.push(item);
            }
        }
        let pool = pool_from_images(&distractors, &backend, "desk-rig distractors")?;
        let split = ProbeGallerySplit::new(probes, injectable, distractors, InjectionRule::Injectable)?;
        Ok(DeskRig { backend, split, jobs, pool })
    }

    pub fn cloaks(&self, cfg: &OptimizerConfig, generator: &GeneratorConfig) -> Result<CloakSet> {
        make_cloaks(&self.jobs, &self.backend, &self.pool, cfg, generator)
    }

    pub fn zero_cloaks(&self, cfg: &OptimizerConfig) -> Result<CloakSet> {
        let shape = self.backend.descriptor().input_shape();
        self.jobs
            .iter()
            .map(|(l, _)| Ok((l.clone(), CloakMask::zero(shape, cfg.eps, cfg.eps_a)?)))
            .collect()
    }

    pub fn top1(&self, cloaks: &CloakSet) -> Result<f64> {
        let cache = GalleryCache::build(&self.split, &self.backend)?;
        Ok(psr_from_ranks(&probe_ranks(&self.split, &cache, cloaks, &self.backend, None)?, 1))
    }

    pub fn evaluate(&self, cloaks: &CloakSet, digest: &str, opts: &EvalOptions) -> Result<EvalReport> {
        evaluate(&self.split, cloaks, &self.backend, digest, opts)
    }

    pub fn distractor_images(&self) -> &[LabeledImage] {
        self.split.distractors()
    }

    pub fn ablate(
        &self,
        axis: AblationAxis,
        values: &[f64],
        base: &OptimizerConfig,
        generator: &GeneratorConfig,
    ) -> Result<Vec<AblationRow>> {
        ablate(axis, values, base, generator, &self.jobs, &self.split, &self.backend, &self.pool)
    }
}

/// Groups images by label, keeping input order inside each group.
pub fn group_by_label(images: &[LabeledImage]) -> BTreeMap<IdentityLabel, Vec<&ImagePlane>> {
    let mut out: BTreeMap<IdentityLabel, Vec<&ImagePlane>> = BTreeMap::new();
    for i in images {
        out.entry(i.label.clone()).or_default().push(&i.image);
    }
    out
}
