//! Small convolutional embedding network.
//!
//! Three stride-2 3×3 convolutions with SiLU activations, global average
//! pooling, then a linear projection whose output is L2-normalized. Everything
//! runs in `f64` with hand-written backpropagation so input gradients can be
//! checked against finite differences.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{check_pixels, normalize_backward, BackendDescriptor, EmbeddingObjective, FaceEmbedder};
use crate::cloak::check_prefix;
use crate::error::{Error, Result};
use crate::types::{l2_norm, Embedding};

pub const TOY_WEIGHTS_MAGIC: &[u8; 6] = b"FCTW1\n";

const KERNEL: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyArchitecture {
    pub input_height: usize,
    pub input_width: usize,
    pub widths: Vec<usize>,
    pub embedding_dim: usize,
}

impl Default for ToyArchitecture {
    fn default() -> Self {
        ToyArchitecture {
            input_height: 32,
            input_width: 32,
            widths: vec![16, 32, 64],
            embedding_dim: 64,
        }
    }
}

impl ToyArchitecture {
    pub fn validate(&self) -> Result<()> {
        crate::plane::Shape::new(self.input_height, self.input_width).validate()?;
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::InvalidParameter("conv widths must be non-empty and positive".into()));
        }
        if self.embedding_dim < 2 {
            return Err(Error::InvalidParameter("embedding_dim must be >= 2".into()));
        }
        Ok(())
    }

    fn conv_layers(&self) -> Vec<ConvGeometry> {
        let mut layers = Vec::with_capacity(self.widths.len());
        let (mut h, mut w, mut c) = (self.input_height, self.input_width, 3);
        for &out in &self.widths {
            let g = ConvGeometry {
                in_ch: c,
                out_ch: out,
                in_h: h,
                in_w: w,
                out_h: h.div_ceil(2),
                out_w: w.div_ceil(2),
            };
            h = g.out_h;
            w = g.out_w;
            c = out;
            layers.push(g);
        }
        layers
    }

    pub fn param_count(&self) -> usize {
        let conv: usize = self
            .conv_layers()
            .iter()
            .map(|g| g.weight_len() + g.out_ch)
            .sum();
        let feat = *self.widths.last().unwrap_or(&0);
        conv + self.embedding_dim * feat + self.embedding_dim
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvGeometry {
    in_ch: usize,
    out_ch: usize,
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
}

impl ConvGeometry {
    fn weight_len(&self) -> usize {
        self.out_ch * self.in_ch * KERNEL * KERNEL
    }

    fn out_len(&self) -> usize {
        self.out_ch * self.out_h * self.out_w
    }

    /// Stride 2, zero padding 1. Tensors are channel-major.
    fn forward(&self, input: &[f64], weight: &[f64], bias: &[f64], out: &mut [f64]) {
        let (ih, iw, oh, ow) = (self.in_h, self.in_w, self.out_h, self.out_w);
        for o in 0..self.out_ch {
            let plane = &mut out[o * oh * ow..(o + 1) * oh * ow];
            plane.fill(bias[o]);
            for i in 0..self.in_ch {
                let src = &input[i * ih * iw..(i + 1) * ih * iw];
                for ky in 0..KERNEL {
                    for kx in 0..KERNEL {
                        let wv = weight[((o * self.in_ch + i) * KERNEL + ky) * KERNEL + kx];
                        for oy in 0..oh {
                            let iy = (2 * oy + ky) as isize - 1;
                            if iy < 0 || iy as usize >= ih {
                                continue;
                            }
                            let row = &src[iy as usize * iw..(iy as usize + 1) * iw];
                            let dst = &mut plane[oy * ow..(oy + 1) * ow];
                            for (ox, d) in dst.iter_mut().enumerate() {
                                let ix = (2 * ox + kx) as isize - 1;
                                if ix >= 0 && (ix as usize) < iw {
                                    *d += wv * row[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Accumulates input gradients into `grad_in` and, when given, parameter
    /// gradients into `grad_w`/`grad_b`.
    fn backward(
        &self,
        input: &[f64],
        weight: &[f64],
        grad_out: &[f64],
        grad_in: Option<&mut [f64]>,
        params: Option<(&mut [f64], &mut [f64])>,
    ) {
        let (ih, iw, oh, ow) = (self.in_h, self.in_w, self.out_h, self.out_w);
        if let Some((grad_w, grad_b)) = params {
            for o in 0..self.out_ch {
                let go = &grad_out[o * oh * ow..(o + 1) * oh * ow];
                grad_b[o] += go.iter().sum::<f64>();
                for i in 0..self.in_ch {
                    let src = &input[i * ih * iw..(i + 1) * ih * iw];
                    for ky in 0..KERNEL {
                        for kx in 0..KERNEL {
                            let mut acc = 0.0;
                            for oy in 0..oh {
                                let iy = (2 * oy + ky) as isize - 1;
                                if iy < 0 || iy as usize >= ih {
                                    continue;
                                }
                                let row = &src[iy as usize * iw..(iy as usize + 1) * iw];
                                for ox in 0..ow {
                                    let ix = (2 * ox + kx) as isize - 1;
                                    if ix >= 0 && (ix as usize) < iw {
                                        acc += go[oy * ow + ox] * row[ix as usize];
                                    }
                                }
                            }
                            grad_w[((o * self.in_ch + i) * KERNEL + ky) * KERNEL + kx] += acc;
                        }
                    }
                }
            }
        }
        if let Some(grad_in) = grad_in {
            for o in 0..self.out_ch {
                let go = &grad_out[o * oh * ow..(o + 1) * oh * ow];
                for i in 0..self.in_ch {
                    let dst = &mut grad_in[i * ih * iw..(i + 1) * ih * iw];
                    for ky in 0..KERNEL {
                        for kx in 0..KERNEL {
                            let wv = weight[((o * self.in_ch + i) * KERNEL + ky) * KERNEL + kx];
                            for oy in 0..oh {
                                let iy = (2 * oy + ky) as isize - 1;
                                if iy < 0 || iy as usize >= ih {
                                    continue;
                                }
                                let row = &mut dst[iy as usize * iw..(iy as usize + 1) * iw];
                                for ox in 0..ow {
                                    let ix = (2 * ox + kx) as isize - 1;
                                    if ix >= 0 && (ix as usize) < iw {
                                        row[ix as usize] += wv * go[oy * ow + ox];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub dataset_digest: String,
    pub epochs: usize,
    pub seed: u64,
    pub heldout_accuracy: f64,
}

/// Parameters of a [`ToyBackend`], flattened layer by layer:
/// conv weights then bias for each block, then projection weights and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyBackendWeights {
    pub architecture: ToyArchitecture,
    pub params: Vec<f64>,
    pub metadata: TrainingMetadata,
}

impl ToyBackendWeights {
    pub fn new(
        architecture: ToyArchitecture,
        params: Vec<f64>,
        metadata: TrainingMetadata,
    ) -> Result<Self> {
        architecture.validate()?;
        if params.len() != architecture.param_count() {
            return Err(Error::shape(
                format!("{} parameters", architecture.param_count()),
                params.len(),
            ));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numeric("toy weights contain non-finite parameters".into()));
        }
        Ok(ToyBackendWeights {
            architecture,
            params,
            metadata,
        })
    }

    /// He-initialized weights.
    pub fn random(architecture: ToyArchitecture, seed: u64) -> Result<Self> {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};

        architecture.validate()?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(architecture.param_count());
        for g in architecture.conv_layers() {
            let std = (2.0 / (g.in_ch * KERNEL * KERNEL) as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("valid std");
            params.extend((0..g.weight_len()).map(|_| normal.sample(&mut rng)));
            params.extend(std::iter::repeat(0.0).take(g.out_ch));
        }
        let feat = *architecture.widths.last().expect("validated");
        let normal = Normal::new(0.0, (1.0 / feat as f64).sqrt()).expect("valid std");
        params.extend((0..architecture.embedding_dim * feat).map(|_| normal.sample(&mut rng)));
        params.extend(std::iter::repeat(0.0).take(architecture.embedding_dim));
        let metadata = TrainingMetadata {
            dataset_digest: String::new(),
            epochs: 0,
            seed,
            heldout_accuracy: 0.0,
        };
        Self::new(architecture, params, metadata)
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for p in &self.params {
            hasher.update(p.to_le_bytes());
        }
        hex::encode(hasher.finalize())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct WeightsHeader {
    input_height: usize,
    input_width: usize,
    widths: Vec<usize>,
    embedding_dim: usize,
    param_count: usize,
    dtype: String,
    training: TrainingMetadata,
    payload_sha256: String,
}

pub fn save_toy_weights(weights: &ToyBackendWeights, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut payload = Vec::with_capacity(weights.params.len() * 8);
    for p in &weights.params {
        payload.extend_from_slice(&p.to_le_bytes());
    }
    let arch = &weights.architecture;
    let header = WeightsHeader {
        input_height: arch.input_height,
        input_width: arch.input_width,
        widths: arch.widths.clone(),
        embedding_dim: arch.embedding_dim,
        param_count: weights.params.len(),
        dtype: "f64".into(),
        training: weights.metadata.clone(),
        payload_sha256: hex::encode(Sha256::digest(&payload)),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = TOY_WEIGHTS_MAGIC.to_vec();
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    std::fs::write(path, out).map_err(|source| Error::Persistence {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_toy_weights(path: impl AsRef<Path>) -> Result<ToyBackendWeights> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let len = check_prefix(path, &bytes, TOY_WEIGHTS_MAGIC)? as usize;
    let corrupt = |reason: String| Error::CorruptHeader {
        path: path.to_path_buf(),
        reason,
    };
    let end = 14usize
        .checked_add(len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| corrupt("header length runs past end of file".into()))?;
    let header: WeightsHeader =
        serde_json::from_slice(&bytes[14..end]).map_err(|e| corrupt(e.to_string()))?;
    if header.dtype != "f64" {
        return Err(corrupt(format!("unsupported dtype {}", header.dtype)));
    }
    let payload = &bytes[end..];
    if payload.len() != header.param_count * 8
        || hex::encode(Sha256::digest(payload)) != header.payload_sha256
    {
        return Err(Error::CorruptPayload {
            path: path.to_path_buf(),
            reason: "weights payload length or digest mismatch".into(),
        });
    }
    let params = payload
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
        .collect();
    let architecture = ToyArchitecture {
        input_height: header.input_height,
        input_width: header.input_width,
        widths: header.widths,
        embedding_dim: header.embedding_dim,
    };
    ToyBackendWeights::new(architecture, params, header.training)
}

/// Intermediate activations kept for the backward pass.
pub(crate) struct ForwardCache {
    /// Input to each conv layer (index 0 is the channel-major image).
    inputs: Vec<Vec<f64>>,
    /// Pre-activation output of each conv layer.
    pre: Vec<Vec<f64>>,
    pooled: Vec<f64>,
    norm: f64,
    pub(crate) unit: Vec<f64>,
}

/// The toy backend: weights plus cached layer geometry.
#[derive(Debug, Clone)]
pub struct ToyBackend {
    descriptor: BackendDescriptor,
    weights: ToyBackendWeights,
    layers: Vec<ConvGeometry>,
}

impl ToyBackend {
    pub fn new(weights: ToyBackendWeights) -> Self {
        let arch = &weights.architecture;
        let descriptor = BackendDescriptor {
            backend_id: format!("toy-{}", &weights.digest()[..12]),
            input_height: arch.input_height,
            input_width: arch.input_width,
            embedding_dim: arch.embedding_dim,
            differentiable: true,
        };
        let layers = arch.conv_layers();
        ToyBackend {
            descriptor,
            weights,
            layers,
        }
    }

    pub fn weights(&self) -> &ToyBackendWeights {
        &self.weights
    }

    /// Offsets into the flat parameter vector of (weight, bias) for each conv layer, then projection.
    fn offsets(&self) -> (Vec<(usize, usize)>, usize, usize) {
        let mut at = 0;
        let mut conv = Vec::with_capacity(self.layers.len());
        for g in &self.layers {
            conv.push((at, at + g.weight_len()));
            at += g.weight_len() + g.out_ch;
        }
        let feat = self.layers.last().expect("non-empty").out_ch;
        let proj_w = at;
        let proj_b = at + self.descriptor.embedding_dim * feat;
        (conv, proj_w, proj_b)
    }

    pub(crate) fn forward(&self, pixels: &[f64]) -> Result<ForwardCache> {
        self.forward_with(&self.weights.params, pixels)
    }

    pub(crate) fn forward_with(&self, params: &[f64], pixels: &[f64]) -> Result<ForwardCache> {
        check_pixels(&self.descriptor, pixels)?;
        let (h, w) = (self.descriptor.input_height, self.descriptor.input_width);
        // (y, x, c) in [0,1]  ->  channel-major, centered
        let mut x = vec![0.0; 3 * h * w];
        for (p, &v) in pixels.iter().enumerate() {
            let c = p % 3;
            let yx = p / 3;
            x[c * h * w + yx] = 2.0 * v - 1.0;
        }
        let (conv_off, proj_w, proj_b) = self.offsets();
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut current = x;
        for (g, &(wo, bo)) in self.layers.iter().zip(&conv_off) {
            let mut out = vec![0.0; g.out_len()];
            g.forward(&current, &params[wo..bo], &params[bo..bo + g.out_ch], &mut out);
            let act: Vec<f64> = out.iter().map(|&z| z * sigmoid(z)).collect();
            inputs.push(current);
            pre.push(out);
            current = act;
        }
        let last = self.layers.last().expect("non-empty");
        let area = (last.out_h * last.out_w) as f64;
        let pooled: Vec<f64> = current
            .chunks_exact(last.out_h * last.out_w)
            .map(|ch| ch.iter().sum::<f64>() / area)
            .collect();
        let d = self.descriptor.embedding_dim;
        let feat = pooled.len();
        let raw: Vec<f64> = (0..d)
            .map(|j| {
                let row = &params[proj_w + j * feat..proj_w + (j + 1) * feat];
                params[proj_b + j] + row.iter().zip(&pooled).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect();
        let norm = l2_norm(&raw);
        if !norm.is_finite() || norm < 1e-12 {
            return Err(Error::Backend {
                backend_id: self.descriptor.backend_id.clone(),
                reason: format!("degenerate activation norm {norm}"),
            });
        }
        let unit = raw.iter().map(|v| v / norm).collect();
        Ok(ForwardCache {
            inputs,
            pre,
            pooled,
            norm,
            unit,
        })
    }

    /// Backpropagates `grad_unit` (dL/d embedding). Returns the input-pixel
    /// gradient in `(y, x, c)` order when `want_input`, and accumulates
    /// parameter gradients into `grad_params` when given.
    pub(crate) fn backward(
        &self,
        params: &[f64],
        cache: &ForwardCache,
        grad_unit: &[f64],
        want_input: bool,
        mut grad_params: Option<&mut [f64]>,
    ) -> Option<Vec<f64>> {
        let (conv_off, proj_w, proj_b) = self.offsets();
        let d = self.descriptor.embedding_dim;
        let feat = cache.pooled.len();
        let grad_raw = normalize_backward(&cache.unit, cache.norm, grad_unit);
        let mut grad_pooled = vec![0.0; feat];
        for j in 0..d {
            let g = grad_raw[j];
            if g == 0.0 {
                continue;
            }
            let row = &params[proj_w + j * feat..proj_w + (j + 1) * feat];
            for (gp, w) in grad_pooled.iter_mut().zip(row) {
                *gp += g * w;
            }
            if let Some(gp) = grad_params.as_deref_mut() {
                gp[proj_b + j] += g;
                for (k, p) in cache.pooled.iter().enumerate() {
                    gp[proj_w + j * feat + k] += g * p;
                }
            }
        }
        let last = self.layers.last().expect("non-empty");
        let area = last.out_h * last.out_w;
        let mut grad_act: Vec<f64> = grad_pooled
            .iter()
            .flat_map(|&g| std::iter::repeat(g / area as f64).take(area))
            .collect();
        for (l, g) in self.layers.iter().enumerate().rev() {
            let grad_pre: Vec<f64> = cache.pre[l]
                .iter()
                .zip(&grad_act)
                .map(|(&z, &ga)| {
                    let s = sigmoid(z);
                    ga * s * (1.0 + z * (1.0 - s))
                })
                .collect();
            let need_in = l > 0 || want_input;
            let mut grad_in = if need_in {
                vec![0.0; g.in_ch * g.in_h * g.in_w]
            } else {
                Vec::new()
            };
            let (wo, bo) = conv_off[l];
            let param_slices = grad_params.as_deref_mut().map(|gp| {
                let (head, tail) = gp.split_at_mut(bo);
                (&mut head[wo..bo], &mut tail[..g.out_ch])
            });
            g.backward(
                &cache.inputs[l],
                &params[wo..bo],
                &grad_pre,
                need_in.then_some(grad_in.as_mut_slice()),
                param_slices,
            );
            grad_act = grad_in;
        }
        if !want_input {
            return None;
        }
        // channel-major -> (y, x, c), including the 2v-1 input scaling
        let hw = self.descriptor.input_height * self.descriptor.input_width;
        let mut out = vec![0.0; 3 * hw];
        for c in 0..3 {
            for p in 0..hw {
                out[p * 3 + c] = 2.0 * grad_act[c * hw + p];
            }
        }
        Some(out)
    }
}

impl FaceEmbedder for ToyBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn embed_pixels(&self, pixels: &[f64]) -> Result<Embedding> {
        let cache = self.forward(pixels)?;
        Embedding::from_unit(cache.unit)
    }

    fn objective_and_gradient(
        &self,
        pixels: &[f64],
        objective: &dyn EmbeddingObjective,
    ) -> Result<(f64, Vec<f64>)> {
        let cache = self.forward(pixels)?;
        let value = objective.value(&cache.unit);
        let grad_e = objective.gradient(&cache.unit);
        if grad_e.len() != cache.unit.len() {
            return Err(Error::shape(
                format!("objective gradient of length {}", cache.unit.len()),
                grad_e.len(),
            ));
        }
        let grad = self
            .backward(&self.weights.params, &cache, &grad_e, true, None)
            .expect("input gradient requested");
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Backend {
                backend_id: self.descriptor.backend_id.clone(),
                reason: "non-finite gradient".into(),
            });
        }
        Ok((value, grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{ConstantObjective, LinearObjective};
    use crate::plane::ImagePlane;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_backend(seed: u64) -> ToyBackend {
        let arch = ToyArchitecture {
            input_height: 16,
            input_width: 16,
            ..ToyArchitecture::default()
        };
        ToyBackend::new(ToyBackendWeights::random(arch, seed).unwrap())
    }

    fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> ImagePlane {
        ImagePlane::from_fn(h, w, |_, _, _| rng.gen_range(0.0..1.0)).unwrap()
    }

    #[test]
    fn param_count_matches_layout() {
        let arch = ToyArchitecture::default();
        // 16*3*9+16 + 32*16*9+32 + 64*32*9+64 + 64*64+64
        assert_eq!(arch.param_count(), 448 + 4640 + 18496 + 4160);
    }

    #[test]
    fn embeddings_are_unit_and_deterministic() {
        let backend = small_backend(1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = random_image(&mut rng, 16, 16);
        let a = backend.embed(&img).unwrap();
        let b = backend.embed(&img).unwrap();
        assert_eq!(a, b);
        assert!((l2_norm(a.values()) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let backend = small_backend(1);
        let img = ImagePlane::constant(16, 20, 0.5).unwrap();
        assert!(matches!(backend.embed(&img), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn constant_objective_has_zero_gradient() {
        let backend = small_backend(3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let img = random_image(&mut rng, 16, 16);
        let g = backend.input_gradient(&img, &ConstantObjective(2.5)).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn input_gradient_matches_central_differences() {
        let backend = small_backend(5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let img = random_image(&mut rng, 16, 16);
        let dir: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = l2_norm(&dir);
        let obj = LinearObjective {
            direction: dir.iter().map(|v| v / n).collect(),
        };
        let grad = backend.input_gradient(&img, &obj).unwrap();
        let base = img.to_f64();
        let h = 1e-4;
        for _ in 0..40 {
            let k = rng.gen_range(0..base.len());
            let mut plus = base.clone();
            plus[k] += h;
            let mut minus = base.clone();
            minus[k] -= h;
            let fp = obj.value(backend.embed_pixels(&plus).unwrap().values());
            let fm = obj.value(backend.embed_pixels(&minus).unwrap().values());
            let fd = (fp - fm) / (2.0 * h);
            let rel = (fd - grad[k]).abs() / fd.abs().max(grad[k].abs()).max(1e-6);
            assert!(rel < 1e-3, "coord {k}: analytic {} vs fd {fd}", grad[k]);
        }
    }

    #[test]
    fn parameter_gradient_matches_central_differences() {
        let backend = small_backend(7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pixels = random_image(&mut rng, 16, 16).to_f64();
        let dir: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let obj = LinearObjective { direction: dir };
        let params = backend.weights().params.clone();
        let cache = backend.forward_with(&params, &pixels).unwrap();
        let mut grad = vec![0.0; params.len()];
        let grad_e = obj.gradient(&cache.unit);
        backend.backward(&params, &cache, &grad_e, false, Some(&mut grad));
        let h = 1e-5;
        for _ in 0..40 {
            let k = rng.gen_range(0..params.len());
            let mut p = params.clone();
            p[k] += h;
            let fp = obj.value(&backend.forward_with(&p, &pixels).unwrap().unit);
            p[k] -= 2.0 * h;
            let fm = obj.value(&backend.forward_with(&p, &pixels).unwrap().unit);
            let fd = (fp - fm) / (2.0 * h);
            let rel = (fd - grad[k]).abs() / fd.abs().max(grad[k].abs()).max(1e-6);
            assert!(rel < 1e-3, "param {k}: analytic {} vs fd {fd}", grad[k]);
        }
    }

    #[test]
    fn weights_round_trip_through_container() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.fctw");
        let weights = ToyBackendWeights::random(ToyArchitecture::default(), 11).unwrap();
        save_toy_weights(&weights, &path).unwrap();
        assert_eq!(load_toy_weights(&path).unwrap(), weights);
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[1] = b'X';
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(load_toy_weights(&path), Err(Error::CorruptHeader { .. })));
    }
}
