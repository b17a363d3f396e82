//! Face-embedding backends.
//!
//! Every backend maps an H×W×3 image to a unit-norm [`Embedding`]. Backends
//! that can differentiate also return the gradient of a scalar objective of
//! the embedding with respect to the input pixels; those can act as the
//! surrogate during cloak optimization, the rest only as evaluation targets.

mod linear;
mod onnx;
mod toy;
mod train;

use serde::{Deserialize, Serialize};

pub use linear::LinearEmbedder;
pub use onnx::{load_exported_backend, OnnxBackend, TensorLayout};
pub use toy::{
    load_toy_weights, save_toy_weights, ToyArchitecture, ToyBackend, ToyBackendWeights,
    TrainingMetadata, TOY_WEIGHTS_MAGIC,
};
pub use train::{train_toy_backend, ToyTrainingConfig};

use crate::error::{Error, Result};
use crate::plane::{ImagePlane, Shape};
use crate::types::Embedding;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub backend_id: String,
    pub input_height: usize,
    pub input_width: usize,
    pub embedding_dim: usize,
    pub differentiable: bool,
}

impl BackendDescriptor {
    pub fn input_shape(&self) -> Shape {
        Shape::new(self.input_height, self.input_width)
    }
}

/// A scalar function of an embedding together with its gradient.
pub trait EmbeddingObjective: Sync {
    fn value(&self, embedding: &[f64]) -> f64;
    fn gradient(&self, embedding: &[f64]) -> Vec<f64>;
}

/// `f(e) = c`.
#[derive(Debug, Clone, Copy)]
pub struct ConstantObjective(pub f64);

impl EmbeddingObjective for ConstantObjective {
    fn value(&self, _: &[f64]) -> f64 {
        self.0
    }

    fn gradient(&self, embedding: &[f64]) -> Vec<f64> {
        vec![0.0; embedding.len()]
    }
}

/// `f(e) = <e, direction>`.
#[derive(Debug, Clone)]
pub struct LinearObjective {
    pub direction: Vec<f64>,
}

impl EmbeddingObjective for LinearObjective {
    fn value(&self, embedding: &[f64]) -> f64 {
        embedding.iter().zip(&self.direction).map(|(a, b)| a * b).sum()
    }

    fn gradient(&self, _: &[f64]) -> Vec<f64> {
        self.direction.clone()
    }
}

/// Uniform contract over embedding models.
///
/// Pixels are passed as `f64` in `(y, x, c)` order with values in `[0, 1]`.
pub trait FaceEmbedder: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;

    /// Embeds raw pixels. `pixels.len()` must match the descriptor.
    fn embed_pixels(&self, pixels: &[f64]) -> Result<Embedding>;

    /// Returns `objective(embed(pixels))` and its gradient with respect to
    /// `pixels`.
    fn objective_and_gradient(
        &self,
        _pixels: &[f64],
        _objective: &dyn EmbeddingObjective,
    ) -> Result<(f64, Vec<f64>)> {
        Err(self.no_gradient())
    }

    fn embed(&self, image: &ImagePlane) -> Result<Embedding> {
        self.check_shape(image.shape())?;
        self.embed_pixels(&image.to_f64())
    }

    fn input_gradient(
        &self,
        image: &ImagePlane,
        objective: &dyn EmbeddingObjective,
    ) -> Result<Vec<f64>> {
        if !self.descriptor().differentiable {
            return Err(self.no_gradient());
        }
        self.check_shape(image.shape())?;
        Ok(self.objective_and_gradient(&image.to_f64(), objective)?.1)
    }

    fn check_shape(&self, shape: Shape) -> Result<()> {
        self.descriptor().input_shape().ensure_eq(&shape)
    }

    fn no_gradient(&self) -> Error {
        Error::Capability {
            backend_id: self.descriptor().backend_id.clone(),
            capability: "input gradients",
        }
    }
}

pub(crate) fn check_pixels(desc: &BackendDescriptor, pixels: &[f64]) -> Result<()> {
    let expected = desc.input_shape().len();
    if pixels.len() != expected {
        return Err(Error::shape(
            format!("{expected} pixels ({})", desc.input_shape()),
            pixels.len(),
        ));
    }
    Ok(())
}

/// Gradient of `z / |z|` pulled back from `grad_e`.
pub(crate) fn normalize_backward(unit: &[f64], norm: f64, grad_e: &[f64]) -> Vec<f64> {
    let dot: f64 = unit.iter().zip(grad_e).map(|(u, g)| u * g).sum();
    unit.iter()
        .zip(grad_e)
        .map(|(u, g)| (g - u * dot) / norm)
        .collect()
}
