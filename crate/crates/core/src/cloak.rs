//! Cloak masks, budget maps, and the `FCLK1` container.
//!
//! Layout of a cloak file:
//!
//! ```text
//! "FCLK1\n"                      6 bytes magic
//! header_len                     u64 little-endian
//! header                         UTF-8 JSON, header_len bytes
//! delta                          H*W*C f32 little-endian
//! attention                      H*W*C f32 little-endian
//! budget                         H*W*C f32 little-endian
//! ```
//!
//! `payload_sha256` in the header covers the three payloads concatenated.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::plane::{f32_from_le_bytes, f32_le_bytes, Shape};

pub const CLOAK_MAGIC: &[u8; 6] = b"FCLK1\n";

/// Attention values live in this closed range.
pub const ATTENTION_RANGE: (f32, f32) = (0.0, 2.0);

/// Per-element perturbation allowance. Every element is either the base
/// budget or the boosted one.
#[derive(Debug, Clone, PartialEq)]
pub struct BudgetMap {
    shape: Shape,
    values: Vec<f32>,
    base_eps: f64,
    boosted_eps: f64,
}

impl BudgetMap {
    pub fn new(shape: Shape, values: Vec<f32>, base_eps: f64, boosted_eps: f64) -> Result<Self> {
        check_eps(base_eps, boosted_eps)?;
        if values.len() != shape.len() {
            return Err(Error::shape(
                format!("{} budget values", shape.len()),
                values.len(),
            ));
        }
        let (base, boosted) = (base_eps as f32, boosted_eps as f32);
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, &v)| v != base && v != boosted)
        {
            return Err(Error::InvariantViolation(format!(
                "budget element {i} = {v} is neither {base} nor {boosted}"
            )));
        }
        Ok(BudgetMap {
            shape,
            values,
            base_eps,
            boosted_eps,
        })
    }

    pub fn uniform(shape: Shape, eps: f64) -> Result<Self> {
        Self::new(shape, vec![eps as f32; shape.len()], eps, eps)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn base_eps(&self) -> f64 {
        self.base_eps
    }

    pub fn boosted_eps(&self) -> f64 {
        self.boosted_eps
    }

    /// Number of elements carrying the boosted budget.
    pub fn boosted_count(&self) -> usize {
        if self.base_eps == self.boosted_eps {
            return 0;
        }
        let boosted = self.boosted_eps as f32;
        self.values.iter().filter(|&&v| v == boosted).count()
    }
}

fn check_eps(base: f64, boosted: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&base) || !(0.0..=1.0).contains(&boosted) {
        return Err(Error::InvariantViolation(format!(
            "budgets must lie in [0, 1], got eps={base}, eps_A={boosted}"
        )));
    }
    if boosted < base {
        return Err(Error::InvariantViolation(format!(
            "boosted budget {boosted} is below base budget {base}"
        )));
    }
    Ok(())
}

/// An identity-specific perturbation ready to be added to any image of the
/// same person.
///
/// `delta` holds the already-projected product of the raw perturbation and the
/// attention map, so `|delta| <= budget` holds element-wise and applying the
/// cloak needs nothing else.
#[derive(Debug, Clone, PartialEq)]
pub struct CloakMask {
    shape: Shape,
    delta: Vec<f32>,
    attention: Vec<f32>,
    budget: BudgetMap,
    pub backend_id: String,
    pub seed_identity_hash: String,
    pub config_digest: String,
}

impl CloakMask {
    pub fn new(
        delta: Vec<f32>,
        attention: Vec<f32>,
        budget: BudgetMap,
        backend_id: impl Into<String>,
        seed_identity_hash: impl Into<String>,
        config_digest: impl Into<String>,
    ) -> Result<Self> {
        let shape = budget.shape();
        for (name, len) in [("delta", delta.len()), ("attention", attention.len())] {
            if len != shape.len() {
                return Err(Error::shape(format!("{name} of {shape}"), len));
            }
        }
        for (i, (&d, &b)) in delta.iter().zip(budget.values()).enumerate() {
            if !d.is_finite() || d.abs() > b {
                return Err(Error::InvariantViolation(format!(
                    "delta element {i} = {d} exceeds budget {b}"
                )));
            }
        }
        let (lo, hi) = ATTENTION_RANGE;
        if let Some((i, a)) = attention
            .iter()
            .enumerate()
            .find(|(_, &a)| !(lo..=hi).contains(&a))
        {
            return Err(Error::InvariantViolation(format!(
                "attention element {i} = {a} outside [{lo}, {hi}]"
            )));
        }
        Ok(CloakMask {
            shape,
            delta,
            attention,
            budget,
            backend_id: backend_id.into(),
            seed_identity_hash: seed_identity_hash.into(),
            config_digest: config_digest.into(),
        })
    }

    /// All-zero perturbation with unit attention.
    pub fn zero(shape: Shape, eps: f64, eps_a: f64) -> Result<Self> {
        let budget = BudgetMap::new(shape, vec![eps as f32; shape.len()], eps, eps_a)?;
        Self::new(
            vec![0.0; shape.len()],
            vec![1.0; shape.len()],
            budget,
            "none",
            "",
            "",
        )
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn delta(&self) -> &[f32] {
        &self.delta
    }

    pub fn attention(&self) -> &[f32] {
        &self.attention
    }

    pub fn budget(&self) -> &BudgetMap {
        &self.budget
    }

    pub fn max_abs_delta(&self) -> f32 {
        self.delta.iter().fold(0.0f32, |m, d| m.max(d.abs()))
    }

    fn payload(&self) -> Vec<u8> {
        let mut out = f32_le_bytes(&self.delta);
        out.extend(f32_le_bytes(&self.attention));
        out.extend(f32_le_bytes(self.budget.values()));
        out
    }

    pub fn header(&self) -> CloakHeader {
        self.header_for(&self.payload())
    }

    fn header_for(&self, payload: &[u8]) -> CloakHeader {
        CloakHeader {
            height: self.shape.height,
            width: self.shape.width,
            channels: self.shape.channels,
            base_eps: self.budget.base_eps(),
            boosted_eps: self.budget.boosted_eps(),
            backend_id: self.backend_id.clone(),
            seed_identity_hash: self.seed_identity_hash.clone(),
            config_digest: self.config_digest.clone(),
            payload_sha256: hex::encode(Sha256::digest(payload)),
        }
    }

    /// Serializes into the container byte layout.
    pub fn to_bytes(&self) -> Vec<u8> {
        let payload = self.payload();
        let header = self.header_for(&payload);
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(CLOAK_MAGIC.len() + 8 + json.len() + payload.len());
        out.extend_from_slice(CLOAK_MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        out
    }
}

/// JSON header of a cloak file. Field order is the on-disk order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloakHeader {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub base_eps: f64,
    pub boosted_eps: f64,
    pub backend_id: String,
    pub seed_identity_hash: String,
    pub config_digest: String,
    pub payload_sha256: String,
}

impl CloakHeader {
    pub fn shape(&self) -> Shape {
        Shape {
            height: self.height,
            width: self.width,
            channels: self.channels,
        }
    }
}

pub fn save_cloak(cloak: &CloakMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, cloak.to_bytes()).map_err(|source| Error::Persistence {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads only the magic and header of a cloak file.
pub fn read_cloak_header(path: impl AsRef<Path>) -> Result<CloakHeader> {
    let path = path.as_ref();
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut prefix = [0u8; 14];
    file.read_exact(&mut prefix).map_err(|_| Error::CorruptHeader {
        path: path.to_path_buf(),
        reason: "file shorter than magic and length prefix".into(),
    })?;
    let len = check_prefix(path, &prefix, CLOAK_MAGIC)?;
    let mut json = Vec::new();
    file.take(len)
        .read_to_end(&mut json)
        .map_err(|e| Error::io(path, e))?;
    parse_header(path, &json, len)
}

pub fn load_cloak(path: impl AsRef<Path>) -> Result<CloakMask> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    cloak_from_bytes(path, &bytes)
}

pub(crate) fn check_prefix(path: &Path, prefix: &[u8], magic: &[u8; 6]) -> Result<u64> {
    if prefix.len() < 14 || &prefix[..6] != magic {
        return Err(Error::CorruptHeader {
            path: path.to_path_buf(),
            reason: format!(
                "bad magic, expected {:?}",
                String::from_utf8_lossy(magic).trim_end()
            ),
        });
    }
    let mut len = [0u8; 8];
    len.copy_from_slice(&prefix[6..14]);
    Ok(u64::from_le_bytes(len))
}

fn parse_header(path: &Path, json: &[u8], declared: u64) -> Result<CloakHeader> {
    let corrupt = |reason: String| Error::CorruptHeader {
        path: path.to_path_buf(),
        reason,
    };
    if json.len() as u64 != declared {
        return Err(corrupt(format!(
            "header declares {declared} bytes, file holds {}",
            json.len()
        )));
    }
    let header: CloakHeader =
        serde_json::from_slice(json).map_err(|e| corrupt(format!("header json: {e}")))?;
    let shape = header.shape();
    if shape.validate().is_err() {
        return Err(Error::shape("at least 16x16x3", shape));
    }
    check_eps(header.base_eps, header.boosted_eps)?;
    Ok(header)
}

fn cloak_from_bytes(path: &Path, bytes: &[u8]) -> Result<CloakMask> {
    let len = check_prefix(path, bytes, CLOAK_MAGIC)?;
    let start = 14usize;
    let end = start
        .checked_add(len as usize)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::CorruptHeader {
            path: path.to_path_buf(),
            reason: format!("header length {len} runs past end of file"),
        })?;
    let header = parse_header(path, &bytes[start..end], len)?;
    let shape = header.shape();
    let payload = &bytes[end..];
    let expected = shape.len() * 4 * 3;
    if payload.len() != expected {
        return Err(Error::CorruptPayload {
            path: path.to_path_buf(),
            reason: format!("expected {expected} payload bytes, found {}", payload.len()),
        });
    }
    let digest = hex::encode(Sha256::digest(payload));
    if digest != header.payload_sha256 {
        return Err(Error::CorruptPayload {
            path: path.to_path_buf(),
            reason: "payload digest does not match header".into(),
        });
    }
    let n = shape.len() * 4;
    let delta = f32_from_le_bytes(&payload[..n]);
    let attention = f32_from_le_bytes(&payload[n..2 * n]);
    let budget = f32_from_le_bytes(&payload[2 * n..]);
    let budget = BudgetMap::new(shape, budget, header.base_eps, header.boosted_eps)?;
    CloakMask::new(
        delta,
        attention,
        budget,
        header.backend_id,
        header.seed_identity_hash,
        header.config_digest,
    )
}
