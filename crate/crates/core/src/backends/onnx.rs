//! Adapter for exported recognition models in ONNX format.
//!
//! The graph must have one image input of rank 4 (`N×C×H×W` or `N×H×W×C`) and
//! one embedding output. Layout comes from the `layout` metadata property when
//! present, otherwise from where the size-3 axis sits. Pixels are fed as
//! `(255·p − input_mean) / input_std`; both default to 127.5 and can be set via
//! metadata properties of the same names.
//!
//! Inference only: these backends serve as evaluation targets, never as the
//! optimization surrogate.

use std::collections::HashMap;
use std::path::Path;

use sha2::{Digest, Sha256};
use tract_onnx::pb;
use tract_onnx::prelude::*;

use super::{check_pixels, BackendDescriptor, FaceEmbedder};
use crate::error::{Error, Result};
use crate::types::Embedding;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorLayout {
    Nchw,
    Nhwc,
}

type Plan = SimplePlan<TypedFact, Box<dyn TypedOp>, Graph<TypedFact, Box<dyn TypedOp>>>;

pub struct OnnxBackend {
    descriptor: BackendDescriptor,
    layout: TensorLayout,
    input_mean: f32,
    input_std: f32,
    plan: Plan,
}

impl std::fmt::Debug for OnnxBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OnnxBackend")
            .field("descriptor", &self.descriptor)
            .field("layout", &self.layout)
            .finish_non_exhaustive()
    }
}

impl OnnxBackend {
    pub fn layout(&self) -> TensorLayout {
        self.layout
    }
}

fn declared_dims(info: &pb::ValueInfoProto) -> Option<Vec<Option<i64>>> {
    use pb::tensor_shape_proto::dimension::Value;
    use pb::type_proto::Value as TypeValue;

    let TypeValue::TensorType(tensor) = info.r#type.as_ref()?.value.as_ref()?;
    let shape = tensor.shape.as_ref()?;
    Some(
        shape
            .dim
            .iter()
            .map(|d| match d.value {
                Some(Value::DimValue(v)) if v > 0 => Some(v),
                _ => None,
            })
            .collect(),
    )
}

/// Loads an ONNX embedding model and prepares it for single-image inference.
pub fn load_exported_backend(path: impl AsRef<Path>) -> Result<OnnxBackend> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let unsupported = |reason: String| Error::UnsupportedFormat {
        path: path.to_path_buf(),
        reason,
    };
    // A serialized ModelProto opens with field 1 (ir_version, varint).
    if bytes.first() != Some(&0x08) {
        return Err(unsupported("not an ONNX model (bad leading tag)".into()));
    }
    let proto = tract_onnx::onnx()
        .proto_model_for_read(&mut bytes.as_slice())
        .map_err(|e| unsupported(format!("protobuf decode: {e}")))?;
    let graph = proto
        .graph
        .as_ref()
        .ok_or_else(|| unsupported("model has no graph".into()))?;
    let initializers: std::collections::HashSet<&str> =
        graph.initializer.iter().map(|t| t.name.as_str()).collect();
    let inputs: Vec<&pb::ValueInfoProto> = graph
        .input
        .iter()
        .filter(|i| !initializers.contains(i.name.as_str()))
        .collect();
    if inputs.len() != 1 || graph.output.len() != 1 {
        return Err(unsupported(format!(
            "expected one image input and one embedding output, found {} and {}",
            inputs.len(),
            graph.output.len()
        )));
    }
    let meta: HashMap<&str, &str> = proto
        .metadata_props
        .iter()
        .map(|p| (p.key.as_str(), p.value.as_str()))
        .collect();

    let dims = declared_dims(inputs[0])
        .filter(|d| d.len() == 4)
        .ok_or_else(|| unsupported("shape metadata missing: input must be rank 4".into()))?;
    let layout = match meta.get("layout").map(|s| s.to_ascii_uppercase()) {
        Some(l) if l == "NCHW" => TensorLayout::Nchw,
        Some(l) if l == "NHWC" => TensorLayout::Nhwc,
        Some(other) => return Err(unsupported(format!("unknown layout {other}"))),
        None => match (dims[1], dims[3]) {
            (Some(3), _) => TensorLayout::Nchw,
            (_, Some(3)) => TensorLayout::Nhwc,
            _ => return Err(unsupported("shape metadata missing: no 3-channel axis".into())),
        },
    };
    let (h, w) = match layout {
        TensorLayout::Nchw => (dims[2], dims[3]),
        TensorLayout::Nhwc => (dims[1], dims[2]),
    };
    let (Some(h), Some(w)) = (h, w) else {
        return Err(unsupported("shape metadata missing: symbolic height/width".into()));
    };
    let (h, w) = (h as usize, w as usize);
    let parse_meta = |key: &str, default: f32| -> Result<f32> {
        match meta.get(key) {
            Some(v) => v
                .parse::<f32>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| unsupported(format!("bad {key} metadata {v:?}"))),
            None => Ok(default),
        }
    };
    let input_mean = parse_meta("input_mean", 127.5)?;
    let input_std = parse_meta("input_std", 127.5)?;
    if input_std == 0.0 {
        return Err(unsupported("input_std must be non-zero".into()));
    }

    let input_shape: [usize; 4] = match layout {
        TensorLayout::Nchw => [1, 3, h, w],
        TensorLayout::Nhwc => [1, h, w, 3],
    };
    let model = tract_onnx::onnx()
        .model_for_proto_model(&proto)
        .and_then(|m| m.with_input_fact(0, f32::fact(input_shape).into()))
        .and_then(|m| m.into_optimized())
        .map_err(|e| unsupported(format!("graph: {e}")))?;
    let out_fact = model
        .output_fact(0)
        .map_err(|e| unsupported(format!("output: {e}")))?;
    let embedding_dim = out_fact
        .shape
        .as_concrete()
        .map(|s| s.iter().product::<usize>())
        .ok_or_else(|| unsupported("shape metadata missing: symbolic output".into()))?;
    if embedding_dim < 2 {
        return Err(unsupported(format!("embedding dimension {embedding_dim} < 2")));
    }
    let plan = model
        .into_runnable()
        .map_err(|e| unsupported(format!("plan: {e}")))?;

    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into());
    let digest = hex::encode(Sha256::digest(&bytes));
    Ok(OnnxBackend {
        descriptor: BackendDescriptor {
            backend_id: format!("onnx-{stem}-{}", &digest[..8]),
            input_height: h,
            input_width: w,
            embedding_dim,
            differentiable: false,
        },
        layout,
        input_mean,
        input_std,
        plan,
    })
}

impl FaceEmbedder for OnnxBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn embed_pixels(&self, pixels: &[f64]) -> Result<Embedding> {
        check_pixels(&self.descriptor, pixels)?;
        let (h, w) = (self.descriptor.input_height, self.descriptor.input_width);
        let scale = |p: f64| (p as f32 * 255.0 - self.input_mean) / self.input_std;
        let tensor: Tensor = match self.layout {
            TensorLayout::Nhwc => {
                tract_ndarray::Array4::from_shape_fn((1, h, w, 3), |(_, y, x, c)| {
                    scale(pixels[(y * w + x) * 3 + c])
                })
                .into()
            }
            TensorLayout::Nchw => {
                tract_ndarray::Array4::from_shape_fn((1, 3, h, w), |(_, c, y, x)| {
                    scale(pixels[(y * w + x) * 3 + c])
                })
                .into()
            }
        };
        let backend_err = |reason: String| Error::Backend {
            backend_id: self.descriptor.backend_id.clone(),
            reason,
        };
        let outputs = self
            .plan
            .run(tvec!(tensor.into()))
            .map_err(|e| backend_err(e.to_string()))?;
        let view = outputs[0]
            .to_array_view::<f32>()
            .map_err(|e| backend_err(e.to_string()))?;
        let raw: Vec<f64> = view.iter().map(|&v| v as f64).collect();
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(backend_err("non-finite activation".into()));
        }
        Embedding::normalize(raw).map_err(|e| backend_err(e.to_string()))
    }
}
