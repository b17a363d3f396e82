//! Expands one seed face into a small set of variants to optimize over.

mod augment;
mod external;

pub use augment::{augment_once, AugmentParams, AugmentRanges};
pub use external::{
    fetch_generated_variants, ExternalGeneratorConfig, GeneratorClient, HttpGeneratorClient,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plane::ImagePlane;

pub const DEFAULT_VARIANTS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorConfig {
    /// Returns the seed itself; only valid with `n = 1`.
    Identity,
    Augment(AugmentRanges),
    External(ExternalGeneratorConfig),
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig::Augment(AugmentRanges::default())
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            GeneratorConfig::Augment(r) => r.validate(),
            GeneratorConfig::External(c) if c.endpoint.is_empty() => Err(
                Error::InvalidParameter("external generator endpoint is empty".into()),
            ),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantSet {
    pub seed: ImagePlane,
    pub variants: Vec<ImagePlane>,
    pub generator_id: String,
    pub seed_value: u64,
}

impl VariantSet {
    pub fn new(
        seed: ImagePlane,
        variants: Vec<ImagePlane>,
        generator_id: impl Into<String>,
        seed_value: u64,
    ) -> Result<Self> {
        if variants.is_empty() {
            return Err(Error::InvalidParameter("variant set needs at least one image".into()));
        }
        for v in &variants {
            seed.shape().ensure_eq(&v.shape())?;
        }
        Ok(VariantSet {
            seed,
            variants,
            generator_id: generator_id.into(),
            seed_value,
        })
    }

    pub fn n(&self) -> usize {
        self.variants.len()
    }

    /// Seed first, then each variant that differs from it.
    pub fn optimization_images(&self) -> Vec<&ImagePlane> {
        std::iter::once(&self.seed)
            .chain(self.variants.iter().filter(|v| **v != self.seed))
            .collect()
    }
}

pub fn generate_variants(
    seed: &ImagePlane,
    n: usize,
    generator: &GeneratorConfig,
    rng_seed: u64,
) -> Result<VariantSet> {
    if n == 0 {
        return Err(Error::InvalidParameter("n_variants must be >= 1".into()));
    }
    generator.validate()?;
    match generator {
        GeneratorConfig::Identity => {
            if n != 1 {
                return Err(Error::InvalidParameter(format!(
                    "identity generator yields one variant, {n} requested"
                )));
            }
            VariantSet::new(seed.clone(), vec![seed.clone()], "identity", rng_seed)
        }
        GeneratorConfig::Augment(ranges) => {
            let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
            let mut variants: Vec<ImagePlane> = Vec::with_capacity(n);
            let mut attempts = 0;
            while variants.len() < n {
                attempts += 1;
                if attempts > 16 * n {
                    return Err(Error::Generation {
                        generator_id: "augment".into(),
                        reason: "could not produce pairwise distinct variants".into(),
                    });
                }
                let params = ranges.sample(&mut rng);
                let v = augment_once(seed, &params)?;
                if !variants.contains(&v) {
                    variants.push(v);
                }
            }
            VariantSet::new(seed.clone(), variants, "augment", rng_seed)
        }
        GeneratorConfig::External(cfg) => {
            let client = HttpGeneratorClient::new(cfg.clone())?;
            generate_with_client(seed, n, &client, rng_seed)
        }
    }
}

pub fn generate_with_client(
    seed: &ImagePlane,
    n: usize,
    client: &dyn GeneratorClient,
    rng_seed: u64,
) -> Result<VariantSet> {
    let variants = fetch_generated_variants(client, seed, n)?;
    VariantSet::new(seed.clone(), variants, client.generator_id(), rng_seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured() -> ImagePlane {
        ImagePlane::from_fn(24, 24, |y, x, c| ((x * 5 + y * 9 + c * 3) % 17) as f32 / 16.0).unwrap()
    }

    #[test]
    fn identity_returns_seed() {
        let seed = textured();
        let set = generate_variants(&seed, 1, &GeneratorConfig::Identity, 0).unwrap();
        assert_eq!(set.variants, vec![seed.clone()]);
        assert_eq!(set.optimization_images(), vec![&seed]);
        assert!(generate_variants(&seed, 2, &GeneratorConfig::Identity, 0).is_err());
    }

    #[test]
    fn augment_is_deterministic_and_distinct() {
        let seed = textured();
        let a = generate_variants(&seed, 8, &GeneratorConfig::default(), 42).unwrap();
        let b = generate_variants(&seed, 8, &GeneratorConfig::default(), 42).unwrap();
        assert_eq!(a.n(), 8);
        for (x, y) in a.variants.iter().zip(&b.variants) {
            assert_eq!(x.payload_bytes(), y.payload_bytes());
        }
        for i in 0..8 {
            for j in i + 1..8 {
                assert_ne!(a.variants[i], a.variants[j]);
            }
        }
        let c = generate_variants(&seed, 8, &GeneratorConfig::default(), 43).unwrap();
        assert_ne!(a.variants, c.variants);
    }

    #[test]
    fn zero_variants_rejected() {
        assert!(generate_variants(&textured(), 0, &GeneratorConfig::default(), 0).is_err());
    }

    #[test]
    fn external_service_down_is_generation_error() {
        let cfg = GeneratorConfig::External(ExternalGeneratorConfig {
            endpoint: "http://127.0.0.1:9/".into(),
            timeout_ms: 200,
            retries: 0,
            ..Default::default()
        });
        assert!(matches!(
            generate_variants(&textured(), 2, &cfg, 0),
            Err(Error::Generation { .. })
        ));
    }
}
