use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Opaque identity key. Equality is exact string match.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct IdentityLabel(String);

impl IdentityLabel {
    pub fn new(value: impl Into<String>) -> Result<Self> {
        let value = value.into();
        if value.is_empty() {
            return Err(Error::InvalidParameter("identity label is empty".into()));
        }
        Ok(IdentityLabel(value))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for IdentityLabel {
    type Error = Error;

    fn try_from(value: String) -> Result<Self> {
        IdentityLabel::new(value)
    }
}

impl From<IdentityLabel> for String {
    fn from(label: IdentityLabel) -> String {
        label.0
    }
}

impl fmt::Display for IdentityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Tolerance on the unit-norm invariant of an [`Embedding`].
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

/// Unit-norm feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    values: Vec<f64>,
}

impl Embedding {
    /// L2-normalizes `raw`. Fails on non-finite input or a zero vector.
    pub fn normalize(raw: Vec<f64>) -> Result<Self> {
        if raw.len() < 2 {
            return Err(Error::InvalidParameter(format!(
                "embedding dimension {} < 2",
                raw.len()
            )));
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("embedding has non-finite entries".into()));
        }
        let norm = l2_norm(&raw);
        if norm < 1e-12 {
            return Err(Error::Numeric("embedding has zero norm".into()));
        }
        Ok(Embedding {
            values: raw.into_iter().map(|v| v / norm).collect(),
        })
    }

    /// Wraps a vector that must already be unit-norm.
    pub fn from_unit(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("embedding has non-finite entries".into()));
        }
        let norm = l2_norm(&values);
        if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(Error::InvariantViolation(format!(
                "embedding norm {norm} is not 1"
            )));
        }
        Ok(Embedding { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn distance(&self, other: &Embedding) -> f64 {
        l2_distance(&self.values, &other.values)
    }

    pub fn cosine(&self, other: &Embedding) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Euclidean distance; the one distance used for anchors, loss and ranking.
pub fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub label: IdentityLabel,
    pub image: crate::plane::ImagePlane,
}

impl LabeledImage {
    pub fn new(label: IdentityLabel, image: crate::plane::ImagePlane) -> Self {
        LabeledImage { label, image }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_must_be_non_empty() {
        assert!(IdentityLabel::new("").is_err());
        assert_eq!(IdentityLabel::new("id_7").unwrap().as_str(), "id_7");
        assert!(serde_json::from_str::<IdentityLabel>("\"\"").is_err());
    }

    #[test]
    fn normalize_produces_unit_vectors() {
        let e = Embedding::normalize(vec![3.0, 4.0]).unwrap();
        assert!((l2_norm(e.values()) - 1.0).abs() < 1e-12);
        assert_eq!(e.values(), &[0.6, 0.8]);
        assert!(Embedding::normalize(vec![0.0, 0.0]).is_err());
        assert!(Embedding::normalize(vec![f64::NAN, 1.0]).is_err());
        assert!(Embedding::from_unit(vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn orthogonal_units_are_sqrt2_apart() {
        let a = Embedding::from_unit(vec![1.0, 0.0]).unwrap();
        let b = Embedding::from_unit(vec![0.0, 1.0]).unwrap();
        assert!((a.distance(&b) - 2f64.sqrt()).abs() < 1e-15);
    }
}

