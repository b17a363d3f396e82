use std::path::{Path, PathBuf};

use facecloak::backends::{load_exported_backend, load_toy_weights, FaceEmbedder, ToyBackend};
use facecloak::eval::TransformSpec;
use facecloak::optimizer::{parse_fraction, OptimizerConfig};
use facecloak::synthgen::GeneratorConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::failure::{CliError, Stage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendConfig {
    Toy { weights: PathBuf },
    Onnx { path: PathBuf },
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig::Toy { weights: PathBuf::from("toy.fctw") }
    }
}

impl BackendConfig {
    pub fn load(&self) -> Result<Box<dyn FaceEmbedder>, CliError> {
        match self {
            BackendConfig::Toy { weights } => {
                let w = load_toy_weights(weights).map_err(|e| CliError::backend(Stage::Backend, e))?;
                Ok(Box::new(ToyBackend::new(w)))
            }
            BackendConfig::Onnx { path } => {
                let b = load_exported_backend(path).map_err(|e| CliError::backend(Stage::Backend, e))?;
                Ok(Box::new(b))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Transform specs such as `jpeg:30` or `blur:2`.
    pub robustness: Vec<String>,
    pub verification: bool,
    pub target_far: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            robustness: Vec::new(),
            verification: false,
            target_far: facecloak::eval::DEFAULT_TARGET_FAR,
        }
    }
}

impl EvalSection {
    pub fn transforms(&self) -> facecloak::Result<Vec<TransformSpec>> {
        self.robustness.iter().map(|s| TransformSpec::parse(s)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub rng_seed: u64,
    pub output_dir: PathBuf,
    pub dataset_root: Option<PathBuf>,
    pub probe_per_identity: usize,
    pub backend: BackendConfig,
    pub optimizer: OptimizerConfig,
    pub generator: GeneratorConfig,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            rng_seed: 0,
            output_dir: PathBuf::from("out"),
            dataset_root: None,
            probe_per_identity: 5,
            backend: BackendConfig::default(),
            optimizer: OptimizerConfig::default(),
            generator: GeneratorConfig::default(),
            eval: EvalSection::default(),
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// Base budget, as a number or fraction such as 8/255.
    #[arg(long)]
    pub eps: Option<String>,
    /// Boosted budget inside focus regions.
    #[arg(long)]
    pub eps_a: Option<String>,
    #[arg(long)]
    pub step: Option<String>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub n_variants: Option<usize>,
    #[arg(long)]
    pub rng_seed: Option<u64>,
    #[arg(long)]
    pub no_sticker: bool,
    #[arg(long)]
    pub no_highpass: bool,
    #[arg(long)]
    pub no_attention: bool,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub dataset_root: Option<PathBuf>,
    #[arg(long)]
    pub probe_per_identity: Option<usize>,
    /// Toy backend weights file; replaces the configured backend.
    #[arg(long, conflicts_with = "onnx")]
    pub weights: Option<PathBuf>,
    /// ONNX model file; replaces the configured backend.
    #[arg(long)]
    pub onnx: Option<PathBuf>,
}

fn fraction(text: &str, name: &str) -> Result<f64, CliError> {
    parse_fraction(text).map_err(|e| CliError::config(format!("--{name}: {e}")))
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::config(format!("config: {e}")))
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::config(format!("cannot read config {}: {e}", p.display())))?;
                Self::from_toml(&text)
            }
        }
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), CliError> {
        let opt = &mut self.optimizer;
        if let Some(v) = &o.eps {
            opt.eps = fraction(v, "eps")?;
        }
        if let Some(v) = &o.eps_a {
            opt.eps_a = fraction(v, "eps-a")?;
        }
        if let Some(v) = &o.step {
            opt.step = fraction(v, "step")?;
        }
        if let Some(v) = o.iterations {
            opt.iterations = v;
        }
        if let Some(v) = o.n_variants {
            opt.n_variants = v;
        }
        opt.use_sticker &= !o.no_sticker;
        opt.use_highpass &= !o.no_highpass;
        opt.use_attention &= !o.no_attention;
        if let Some(v) = o.rng_seed {
            self.rng_seed = v;
        }
        if let Some(v) = &o.output_dir {
            self.output_dir = v.clone();
        }
        if let Some(v) = &o.dataset_root {
            self.dataset_root = Some(v.clone());
        }
        if let Some(v) = o.probe_per_identity {
            self.probe_per_identity = v;
        }
        if let Some(w) = &o.weights {
            self.backend = BackendConfig::Toy { weights: w.clone() };
        }
        if let Some(p) = &o.onnx {
            self.backend = BackendConfig::Onnx { path: p.clone() };
        }
        self.optimizer.rng_seed = self.rng_seed;
        Ok(())
    }

    /// Checks every section before any work starts.
    pub fn validate(&self) -> Result<(), CliError> {
        let cfg = |e: facecloak::Error| CliError::config(e.to_string());
        self.optimizer.validate().map_err(cfg)?;
        self.generator.validate().map_err(cfg)?;
        self.eval.transforms().map_err(cfg)?;
        if self.probe_per_identity == 0 {
            return Err(CliError::config("probe_per_identity must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.eval.target_far) {
            return Err(CliError::config("eval.target_far must lie in [0, 1)"));
        }
        Ok(())
    }

    /// SHA-256 of the effective config, recorded in every artifact.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }

    pub fn dataset_root(&self) -> Result<&Path, CliError> {
        self.dataset_root
            .as_deref()
            .ok_or_else(|| CliError::config("dataset_root is required for this command"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fractions_in_toml() {
        let c = RunConfig::from_toml(
            r#"
rng_seed = 3
[optimizer]
eps = "4/255"
eps_a = 0.1
iterations = 5
[generator]
kind = "augment"
max_rotation_deg = 5.0
"#,
        )
        .unwrap();
        assert!((c.optimizer.eps - 4.0 / 255.0).abs() < 1e-15);
        assert_eq!(c.optimizer.iterations, 5);
        assert_eq!(c.optimizer.n_variants, 8);
        match c.generator {
            GeneratorConfig::Augment(r) => assert_eq!(r.max_rotation_deg, 5.0),
            other => panic!("unexpected generator {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("rng_sed = 1").is_err());
    }

    #[test]
    fn flags_override_file() {
        let mut c = RunConfig::from_toml("[optimizer]\niterations = 5").unwrap();
        let o = Overrides { iterations: Some(7), eps: Some("2/255".into()), step: Some("1/255".into()), no_sticker: true, rng_seed: Some(9), ..Default::default() };
        c.apply(&o).unwrap();
        assert_eq!(c.optimizer.iterations, 7);
        assert!(!c.optimizer.use_sticker);
        assert_eq!(c.optimizer.rng_seed, 9);
        c.validate().unwrap();
    }

    #[test]
    fn zero_iterations_fail_validation() {
        let mut c = RunConfig::default();
        c.apply(&Overrides { iterations: Some(0), ..Default::default() }).unwrap();
        assert_eq!(c.validate().unwrap_err().code, 2);
    }

    #[test]
    fn digest_tracks_content() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        assert_eq!(a.digest(), b.digest());
        b.rng_seed = 1;
        assert_ne!(a.digest(), b.digest());
    }
}
