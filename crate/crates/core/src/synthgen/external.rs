use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingestion::resize_and_center;
use crate::plane::{ImagePlane, RawImage};

/// Source of generated face images for one seed.
pub trait GeneratorClient: Send + Sync {
    fn generator_id(&self) -> &str;
    fn request(&self, seed: &ImagePlane, count: usize) -> Result<Vec<RawImage>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExternalGeneratorConfig {
    pub endpoint: String,
    /// Name of an environment variable holding a bearer token.
    pub auth_env: Option<String>,
    pub timeout_ms: u64,
    pub retries: u32,
}

impl Default for ExternalGeneratorConfig {
    fn default() -> Self {
        ExternalGeneratorConfig {
            endpoint: String::new(),
            auth_env: None,
            timeout_ms: 30_000,
            retries: 2,
        }
    }
}

#[derive(Serialize)]
struct GenerateRequest<'a> {
    image: &'a str,
    count: usize,
}

#[derive(Deserialize)]
struct GenerateResponse {
    images: Vec<String>,
}

/// JSON-over-HTTP client: `{image, count}` in, `{images}` out, PNGs as base64.
#[derive(Debug, Clone)]
pub struct HttpGeneratorClient {
    id: String,
    config: ExternalGeneratorConfig,
    token: Option<String>,
}

impl HttpGeneratorClient {
    pub fn new(config: ExternalGeneratorConfig) -> Result<Self> {
        if config.endpoint.is_empty() {
            return Err(Error::InvalidParameter("external generator endpoint is empty".into()));
        }
        let token = match &config.auth_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                Error::InvalidParameter(format!("auth variable {var} is not set"))
            })?),
            None => None,
        };
        Ok(HttpGeneratorClient {
            id: format!("external:{}", config.endpoint),
            config,
            token,
        })
    }

    fn fail(&self, reason: impl Into<String>) -> Error {
        Error::Generation {
            generator_id: self.id.clone(),
            reason: reason.into(),
        }
    }

    fn attempt(&self, agent: &ureq::Agent, body: &str) -> Result<Vec<RawImage>> {
        let mut req = agent
            .post(&self.config.endpoint)
            .header("Content-Type", "application/json");
        if let Some(t) = &self.token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        let mut resp = req.send(body).map_err(|e| self.fail(e.to_string()))?;
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| self.fail(e.to_string()))?;
        let parsed: GenerateResponse =
            serde_json::from_str(&text).map_err(|e| self.fail(format!("malformed reply: {e}")))?;
        parsed
            .images
            .iter()
            .map(|b| {
                let bytes = B64.decode(b).map_err(|e| self.fail(format!("bad base64: {e}")))?;
                RawImage::decode(&bytes).map_err(|e| self.fail(e.to_string()))
            })
            .collect()
    }
}

impl GeneratorClient for HttpGeneratorClient {
    fn generator_id(&self) -> &str {
        &self.id
    }

    fn request(&self, seed: &ImagePlane, count: usize) -> Result<Vec<RawImage>> {
        let png = B64.encode(seed.encode_png()?);
        let body = serde_json::to_string(&GenerateRequest { image: &png, count })
            .map_err(|e| self.fail(e.to_string()))?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(self.config.timeout_ms)))
            .build()
            .into();
        let mut last = None;
        for attempt in 0..=self.config.retries {
            match self.attempt(&agent, &body) {
                Ok(images) => return Ok(images),
                Err(e) => {
                    tracing::warn!(generator = %self.id, attempt, error = %e, "generator request failed");
                    last = Some(e);
                }
            }
        }
        Err(last.unwrap_or_else(|| self.fail("no attempts made")))
    }
}

/// Requests `n` images and validates them against the seed's shape.
///
/// Images of a different size are resized and centre-cropped; pixels
/// outside `[0, 1]` are rejected.
pub fn fetch_generated_variants(
    client: &dyn GeneratorClient,
    seed: &ImagePlane,
    n: usize,
) -> Result<Vec<ImagePlane>> {
    let started = Instant::now();
    let raw = client.request(seed, n)?;
    tracing::info!(
        generator = client.generator_id(),
        requested = n,
        received = raw.len(),
        latency_ms = started.elapsed().as_millis() as u64,
        "generator response"
    );
    if raw.len() != n {
        return Err(Error::Generation {
            generator_id: client.generator_id().to_string(),
            reason: format!("requested {n} images, received {}", raw.len()),
        });
    }
    raw.iter()
        .map(|img| resize_and_center(img, seed.shape()))
        .collect()
}
