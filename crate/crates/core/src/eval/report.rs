use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TransformSpec;
use crate::error::{Error, Result};

/// Serializes `+∞` (identical images) as JSON `null` and back.
mod inf_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerceptualSummary {
    pub images: usize,
    pub ssim_mean: f64,
    pub ssim_min: f64,
    #[serde(with = "inf_as_null")]
    pub psnr_mean: f64,
    #[serde(with = "inf_as_null")]
    pub psnr_min: f64,
}

impl PerceptualSummary {
    /// Summarizes `(ssim, psnr)` pairs. An empty list reports perfect quality.
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Self {
        if pairs.is_empty() {
            return PerceptualSummary {
                images: 0,
                ssim_mean: 1.0,
                ssim_min: 1.0,
                psnr_mean: f64::INFINITY,
                psnr_min: f64::INFINITY,
            };
        }
        let n = pairs.len() as f64;
        PerceptualSummary {
            images: pairs.len(),
            ssim_mean: pairs.iter().map(|p| p.0).sum::<f64>() / n,
            ssim_min: pairs.iter().map(|p| p.0).fold(f64::INFINITY, f64::min),
            psnr_mean: pairs.iter().map(|p| p.1).sum::<f64>() / n,
            psnr_min: pairs.iter().map(|p| p.1).fold(f64::INFINITY, f64::min),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationSummary {
    pub threshold: f64,
    pub target_far: f64,
    pub pairs: usize,
    pub psr: f64,
    /// Share of clean genuine pairs that would count as protected.
    pub clean_false_protection: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub label: String,
    pub transform: TransformSpec,
    pub n: usize,
    pub psr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_digest: String,
    pub backend_id: String,
    pub probes: usize,
    pub cloaked_identities: usize,
    pub top1_psr: f64,
    pub top5_psr: f64,
    pub verification: Option<VerificationSummary>,
    pub perceptual: PerceptualSummary,
    pub robustness: Vec<RobustnessRow>,
}

fn fmt_db(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.2}")
    } else {
        "inf".into()
    }
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report fields are serializable")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Evaluation(format!("report JSON: {e}")))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let p = &self.perceptual;
        let _ = writeln!(out, "backend        {}", self.backend_id);
        let _ = writeln!(out, "config digest  {}", self.config_digest);
        let _ = writeln!(out, "probes         {} ({} identities cloaked)", self.probes, self.cloaked_identities);
        let _ = writeln!(out, "top-1 PSR      {:6.2}%", self.top1_psr);
        let _ = writeln!(out, "top-5 PSR      {:6.2}%", self.top5_psr);
        if let Some(v) = &self.verification {
            let _ = writeln!(
                out,
                "verification   {:6.2}%  (threshold {:.4}, FAR {:.3}, {} pairs)",
                v.psr, v.threshold, v.target_far, v.pairs
            );
        }
        let _ = writeln!(out, "SSIM           mean {:.4}  min {:.4}", p.ssim_mean, p.ssim_min);
        let _ = writeln!(out, "PSNR (dB)      mean {}  min {}", fmt_db(p.psnr_mean), fmt_db(p.psnr_min));
        if !self.robustness.is_empty() {
            let _ = writeln!(out, "\n{:<20} {:>4} {:>8}", "transform", "n", "PSR");
            for r in &self.robustness {
                let _ = writeln!(out, "{:<20} {:>4} {:>7.2}%", r.label, r.n, r.psr);
            }
        }
        out
    }

    /// One summary row, then one row per robustness transform.
    pub fn to_csv(&self) -> String {
        let p = &self.perceptual;
        let mut out = String::from("row,config_digest,backend_id,n,psr,ssim_mean,psnr_mean\n");
        let _ = writeln!(
            out,
            "top1,{},{},1,{},{},{}",
            self.config_digest, self.backend_id, self.top1_psr, p.ssim_mean, fmt_db(p.psnr_mean)
        );
        let _ = writeln!(
            out,
            "top5,{},{},5,{},{},{}",
            self.config_digest, self.backend_id, self.top5_psr, p.ssim_mean, fmt_db(p.psnr_mean)
        );
        for r in &self.robustness {
            let _ = writeln!(
                out,
                "{},{},{},{},{},,",
                r.label, self.config_digest, self.backend_id, r.n, r.psr
            );
        }
        out
    }

    /// Writes `<stem>.json`, `<stem>.txt` and `<stem>.csv` into `dir`.
    pub fn write_all(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        for (ext, body) in [("json", self.to_json()), ("txt", self.to_text()), ("csv", self.to_csv())] {
            let path = dir.join(format!("{stem}.{ext}"));
            std::fs::write(&path, body).map_err(|source| Error::Persistence { path, source })?;
        }
        Ok(())
    }
}
