//! Training for the toy backend: cosine-softmax classification with an
//! additive margin, Adam, and a held-out nearest-neighbour accuracy gate.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::toy::{ToyArchitecture, ToyBackend, ToyBackendWeights, TrainingMetadata};
use super::FaceEmbedder;
use crate::error::{Error, Result};
use crate::eval::{apply_transform, TransformSpec};
use crate::plane::ImagePlane;
use crate::types::{l2_distance, IdentityLabel, LabeledImage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyTrainingConfig {
    pub architecture: ToyArchitecture,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Logit scale of the cosine classifier.
    pub scale: f64,
    /// Additive cosine margin on the true class.
    pub margin: f64,
    /// The last `holdout_per_identity` images of every identity are held out.
    pub holdout_per_identity: usize,
    /// Std of Gaussian pixel noise added to training samples.
    pub noise_sigma: f64,
    /// Max absolute brightness offset added to training samples.
    pub brightness_jitter: f64,
    /// Chance of a Gaussian blur with sigma drawn from `(0, max_blur_sigma]`.
    pub blur_probability: f64,
    pub max_blur_sigma: f64,
    /// Chance of a JPEG round trip at a quality drawn from `[min_jpeg_quality, 95]`.
    pub jpeg_probability: f64,
    pub min_jpeg_quality: u8,
    pub accuracy_floor: f64,
    pub seed: u64,
}

impl Default for ToyTrainingConfig {
    fn default() -> Self {
        ToyTrainingConfig {
            architecture: ToyArchitecture::default(),
            epochs: 40,
            batch_size: 16,
            learning_rate: 3e-3,
            scale: 10.0,
            margin: 0.0,
            holdout_per_identity: 3,
            noise_sigma: 0.01,
            brightness_jitter: 0.03,
            blur_probability: 0.0,
            max_blur_sigma: 1.5,
            jpeg_probability: 0.0,
            min_jpeg_quality: 30,
            accuracy_floor: 0.9,
            seed: 17,
        }
    }
}

impl ToyTrainingConfig {
    fn validate(&self) -> Result<()> {
        self.architecture.validate()?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidParameter("epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.scale > 0.0) || self.margin < 0.0 {
            return Err(Error::InvalidParameter(
                "learning_rate and scale must be positive, margin non-negative".into(),
            ));
        }
        if self.noise_sigma < 0.0 || self.brightness_jitter < 0.0 {
            return Err(Error::InvalidParameter("augmentation strengths must be >= 0".into()));
        }
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !prob(self.blur_probability) || !prob(self.jpeg_probability) {
            return Err(Error::InvalidParameter("augmentation probabilities must lie in [0, 1]".into()));
        }
        if self.blur_probability > 0.0 && !(self.max_blur_sigma > 0.0) {
            return Err(Error::InvalidParameter("max_blur_sigma must be > 0".into()));
        }
        if !(1..=95).contains(&self.min_jpeg_quality) {
            return Err(Error::InvalidParameter("min_jpeg_quality must lie in 1..=95".into()));
        }
        Ok(())
    }
}

pub const MIN_IDENTITIES: usize = 10;
pub const MIN_IMAGES_PER_IDENTITY: usize = 5;

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t);
        let c2 = 1.0 - B2.powi(self.t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = B1 * *m + (1.0 - B1) * g;
            *v = B2 * *v + (1.0 - B2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + 1e-8);
        }
    }
}

/// Splits `dataset` per identity (sorted by label) into train and held-out
/// images, keeping dataset order inside each identity.
#[allow(clippy::type_complexity)]
fn split_by_identity<'a>(
    dataset: &'a [LabeledImage],
    holdout: usize,
) -> Result<Vec<(IdentityLabel, Vec<&'a ImagePlane>, Vec<&'a ImagePlane>)>> {
    let mut groups: BTreeMap<&IdentityLabel, Vec<&ImagePlane>> = BTreeMap::new();
    for item in dataset {
        groups.entry(&item.label).or_default().push(&item.image);
    }
    if groups.len() < MIN_IDENTITIES {
        return Err(Error::DatasetTooSmall(format!(
            "{} identities, need at least {MIN_IDENTITIES}",
            groups.len()
        )));
    }
    groups
        .into_iter()
        .map(|(label, images)| {
            if images.len() < MIN_IMAGES_PER_IDENTITY || images.len() <= holdout {
                return Err(Error::DatasetTooSmall(format!(
                    "identity {label} has {} images, need at least {} and more than the {holdout} held out",
                    images.len(),
                    MIN_IMAGES_PER_IDENTITY
                )));
            }
            let cut = images.len() - holdout;
            Ok((label.clone(), images[..cut].to_vec(), images[cut..].to_vec()))
        })
        .collect()
}

fn dataset_digest(dataset: &[LabeledImage]) -> String {
    let mut hasher = Sha256::new();
    for item in dataset {
        hasher.update(item.label.as_str().as_bytes());
        hasher.update([0u8]);
        hasher.update(item.image.payload_bytes());
    }
    hex::encode(hasher.finalize())
}

/// Nearest-neighbour top-1 accuracy of `probes` against `gallery`.
pub(crate) fn nearest_neighbour_accuracy(
    backend: &dyn FaceEmbedder,
    gallery: &[(usize, &ImagePlane)],
    probes: &[(usize, &ImagePlane)],
) -> Result<f64> {
    let embed_all = |items: &[(usize, &ImagePlane)]| -> Result<Vec<(usize, Vec<f64>)>> {
        items
            .par_iter()
            .map(|(c, img)| Ok((*c, backend.embed(img)?.values().to_vec())))
            .collect()
    };
    let gallery = embed_all(gallery)?;
    let probes = embed_all(probes)?;
    if probes.is_empty() {
        return Ok(0.0);
    }
    let correct = probes
        .iter()
        .filter(|(class, e)| {
            let best = gallery
                .iter()
                .map(|(c, g)| (l2_distance(e, g), *c))
                .min_by(|a, b| a.0.total_cmp(&b.0));
            best.map(|(_, c)| c == *class).unwrap_or(false)
        })
        .count();
    Ok(correct as f64 / probes.len() as f64)
}

/// Trains toy backend weights on a labeled image set.
///
/// Fails with [`Error::DatasetTooSmall`] below 10 identities × 5 images and
/// with [`Error::Training`] when held-out top-1 accuracy ends below
/// `config.accuracy_floor`.
pub fn train_toy_backend(
    dataset: &[LabeledImage],
    config: &ToyTrainingConfig,
) -> Result<ToyBackendWeights> {
    config.validate()?;
    let arch = &config.architecture;
    let input_shape = crate::plane::Shape::new(arch.input_height, arch.input_width);
    for item in dataset {
        input_shape.ensure_eq(&item.image.shape())?;
    }
    let groups = split_by_identity(dataset, config.holdout_per_identity)?;
    let classes = groups.len();
    let train: Vec<(usize, &ImagePlane)> = groups
        .iter()
        .enumerate()
        .flat_map(|(c, (_, tr, _))| tr.iter().map(move |img| (c, *img)))
        .collect();
    let heldout: Vec<(usize, &ImagePlane)> = groups
        .iter()
        .enumerate()
        .flat_map(|(c, (_, _, ho))| ho.iter().map(move |img| (c, *img)))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let init = ToyBackendWeights::random(arch.clone(), rng.gen())?;
    let mut backend = ToyBackend::new(init);
    let d = arch.embedding_dim;
    let n_net = backend.weights().params.len();

    // network params followed by class centres
    let mut params = backend.weights().params.clone();
    let centre_init = Normal::new(0.0, 1.0).expect("valid std");
    params.extend((0..classes * d).map(|_| centre_init.sample(&mut rng)));
    let mut adam = Adam::new(params.len());

    let mut order: Vec<usize> = (0..train.len()).collect();
    let steps_per_epoch = train.len().div_ceil(config.batch_size);
    let total_steps = (steps_per_epoch * config.epochs) as f64;
    let mut step = 0usize;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let results: Vec<(f64, Vec<f64>)> = batch
                .par_iter()
                .map(|&i| {
                    let (class, img) = train[i];
                    let sample_seed = config
                        .seed
                        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                        .wrapping_add((epoch * train.len() + i) as u64);
                    let pixels = augment_pixels(img, sample_seed, config)?;
                    sample_gradient(&backend, &params, n_net, classes, class, &pixels, config)
                })
                .collect::<Result<_>>()?;
            let mut grad = vec![0.0; params.len()];
            for (loss, g) in &results {
                epoch_loss += loss;
                for (a, b) in grad.iter_mut().zip(g) {
                    *a += b;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            let lr = config.learning_rate
                * 0.5
                * (1.0 + (std::f64::consts::PI * step as f64 / total_steps).cos());
            adam.step(&mut params, &grad, lr);
            step += 1;
        }
        tracing::debug!(
            epoch,
            loss = epoch_loss / train.len() as f64,
            "toy backend epoch"
        );
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Training {
                reason: format!("parameters diverged in epoch {epoch}"),
                accuracy: 0.0,
            });
        }
    }

    params.truncate(n_net);
    let metadata = TrainingMetadata {
        dataset_digest: dataset_digest(dataset),
        epochs: config.epochs,
        seed: config.seed,
        heldout_accuracy: 0.0,
    };
    let weights = ToyBackendWeights::new(arch.clone(), params, metadata)?;
    backend = ToyBackend::new(weights);
    let accuracy = nearest_neighbour_accuracy(&backend, &train, &heldout)?;
    tracing::info!(accuracy, "toy backend held-out top-1 accuracy");
    if accuracy < config.accuracy_floor {
        return Err(Error::Training {
            reason: format!("held-out accuracy below floor {}", config.accuracy_floor),
            accuracy,
        });
    }
    let mut weights = backend.weights().clone();
    weights.metadata.heldout_accuracy = accuracy;
    Ok(weights)
}

fn augment_pixels(img: &ImagePlane, seed: u64, config: &ToyTrainingConfig) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = std::borrow::Cow::Borrowed(img);
    if config.blur_probability > 0.0 && rng.gen_bool(config.blur_probability) {
        let sigma = rng.gen_range(0.0..config.max_blur_sigma).max(0.05);
        img = std::borrow::Cow::Owned(apply_transform(&img, &TransformSpec::GaussianBlur { sigma })?);
    }
    if config.jpeg_probability > 0.0 && rng.gen_bool(config.jpeg_probability) {
        let quality = rng.gen_range(config.min_jpeg_quality..=95);
        img = std::borrow::Cow::Owned(apply_transform(&img, &TransformSpec::Jpeg { quality })?);
    }
    let mut pixels = img.to_f64();
    if config.noise_sigma == 0.0 && config.brightness_jitter == 0.0 {
        return Ok(pixels);
    }
    let shift = if config.brightness_jitter > 0.0 {
        rng.gen_range(-config.brightness_jitter..=config.brightness_jitter)
    } else {
        0.0
    };
    let noise = Normal::new(0.0, config.noise_sigma.max(f64::MIN_POSITIVE)).expect("valid std");
    for p in &mut pixels {
        let n = if config.noise_sigma > 0.0 {
            noise.sample(&mut rng)
        } else {
            0.0
        };
        *p = (*p + shift + n).clamp(0.0, 1.0);
    }
    Ok(pixels)
}

/// Cosine-softmax loss of one sample and its gradient over
/// `[network params, class centres]`.
fn sample_gradient(
    backend: &ToyBackend,
    params: &[f64],
    n_net: usize,
    classes: usize,
    class: usize,
    pixels: &[f64],
    config: &ToyTrainingConfig,
) -> Result<(f64, Vec<f64>)> {
    let net = &params[..n_net];
    let centres = &params[n_net..];
    let d = centres.len() / classes;
    let cache = backend.forward_with(net, pixels)?;
    let e = &cache.unit;

    let norms: Vec<f64> = centres
        .chunks_exact(d)
        .map(|w| w.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12))
        .collect();
    let cos: Vec<f64> = centres
        .chunks_exact(d)
        .zip(&norms)
        .map(|(w, n)| w.iter().zip(e).map(|(a, b)| a * b).sum::<f64>() / n)
        .collect();
    let logits: Vec<f64> = cos
        .iter()
        .enumerate()
        .map(|(j, c)| config.scale * (c - if j == class { config.margin } else { 0.0 }))
        .collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = -(exps[class] / sum).ln();

    let mut grad = vec![0.0; params.len()];
    let mut grad_e = vec![0.0; d];
    for j in 0..classes {
        let p = exps[j] / sum;
        let dcos = config.scale * (p - if j == class { 1.0 } else { 0.0 });
        let w = &centres[j * d..(j + 1) * d];
        let n = norms[j];
        for k in 0..d {
            grad_e[k] += dcos * w[k] / n;
        }
        // d cos / d w = (e - cos * w_hat) / |w|
        let g = &mut grad[n_net + j * d..n_net + (j + 1) * d];
        for k in 0..d {
            g[k] = dcos * (e[k] - cos[j] * w[k] / n) / n;
        }
    }
    backend.backward(net, &cache, &grad_e, false, Some(&mut grad[..n_net]));
    Ok((loss, grad))
}
