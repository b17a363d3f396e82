use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

use super::{check_pixels, normalize_backward, BackendDescriptor, EmbeddingObjective, FaceEmbedder};
use crate::error::{Error, Result};
use crate::plane::Shape;
use crate::types::{l2_norm, Embedding};

/// `e = normalize(W x + b)`, with `W` of size `dim × (H·W·3)`.
///
/// Cheap and exactly differentiable, which makes it handy for property tests
/// of the optimizer.
#[derive(Debug, Clone)]
pub struct LinearEmbedder {
    descriptor: BackendDescriptor,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl LinearEmbedder {
    pub fn new(shape: Shape, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        shape.validate()?;
        let dim = bias.len();
        if dim < 2 || weights.len() != dim * shape.len() {
            return Err(Error::shape(
                format!("{dim}x{} weights with dim >= 2", shape.len()),
                weights.len(),
            ));
        }
        Ok(LinearEmbedder {
            descriptor: BackendDescriptor {
                backend_id: format!("linear-{}x{}-d{dim}", shape.height, shape.width),
                input_height: shape.height,
                input_width: shape.width,
                embedding_dim: dim,
                differentiable: true,
            },
            weights,
            bias,
        })
    }

    pub fn random(shape: Shape, dim: usize, seed: u64) -> Result<Self> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0 / (shape.len() as f64).sqrt()).expect("valid std");
        let weights = (0..dim * shape.len()).map(|_| normal.sample(&mut rng)).collect();
        let bias = (0..dim).map(|_| normal.sample(&mut rng)).collect();
        Self::new(shape, weights, bias)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn raw(&self, pixels: &[f64]) -> Vec<f64> {
        let n = pixels.len();
        self.bias
            .iter()
            .enumerate()
            .map(|(j, b)| {
                b + self.weights[j * n..(j + 1) * n]
                    .iter()
                    .zip(pixels)
                    .map(|(w, x)| w * x)
                    .sum::<f64>()
            })
            .collect()
    }
}

impl FaceEmbedder for LinearEmbedder {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn embed_pixels(&self, pixels: &[f64]) -> Result<Embedding> {
        check_pixels(&self.descriptor, pixels)?;
        Embedding::normalize(self.raw(pixels))
    }

    fn objective_and_gradient(
        &self,
        pixels: &[f64],
        objective: &dyn EmbeddingObjective,
    ) -> Result<(f64, Vec<f64>)> {
        check_pixels(&self.descriptor, pixels)?;
        let raw = self.raw(pixels);
        let norm = l2_norm(&raw);
        if norm < 1e-12 || !norm.is_finite() {
            return Err(Error::Numeric("linear embedding has degenerate norm".into()));
        }
        let unit: Vec<f64> = raw.iter().map(|v| v / norm).collect();
        let grad_raw = normalize_backward(&unit, norm, &objective.gradient(&unit));
        let n = pixels.len();
        let mut grad = vec![0.0; n];
        for (j, g) in grad_raw.iter().enumerate() {
            for (acc, w) in grad.iter_mut().zip(&self.weights[j * n..(j + 1) * n]) {
                *acc += g * w;
            }
        }
        Ok((objective.value(&unit), grad))
    }
}
