use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plane::{ImagePlane, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Point {
    pub x: usize,
    pub y: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LandmarkSet {
    pub left_eye: Point,
    pub right_eye: Point,
    pub nose: Point,
    pub mouth: Point,
}

impl LandmarkSet {
    pub fn points(&self) -> [Point; 4] {
        [self.left_eye, self.right_eye, self.nose, self.mouth]
    }

    pub fn validate(&self, shape: Shape) -> Result<()> {
        for p in self.points() {
            if p.x >= shape.width || p.y >= shape.height {
                return Err(Error::InvariantViolation(format!(
                    "landmark ({}, {}) outside {}x{} image",
                    p.x, p.y, shape.width, shape.height
                )));
            }
        }
        if self.left_eye.x >= self.right_eye.x {
            return Err(Error::InvariantViolation(
                "left eye must lie left of right eye".into(),
            ));
        }
        Ok(())
    }
}

pub trait LandmarkDetector: Send + Sync {
    fn detect(&self, image: &ImagePlane) -> Result<LandmarkSet>;
}

/// Fixed fractional positions for aligned face crops, rounded to the nearest
/// pixel.
#[derive(Debug, Clone, Copy, Default)]
pub struct CanonicalLandmarks;

impl CanonicalLandmarks {
    pub const LEFT_EYE: (f64, f64) = (0.30, 0.40);
    pub const RIGHT_EYE: (f64, f64) = (0.70, 0.40);
    pub const NOSE: (f64, f64) = (0.50, 0.58);
    pub const MOUTH: (f64, f64) = (0.50, 0.78);

    pub fn for_shape(shape: Shape) -> LandmarkSet {
        let at = |(fx, fy): (f64, f64)| Point {
            x: (fx * shape.width as f64).round() as usize,
            y: (fy * shape.height as f64).round() as usize,
        };
        LandmarkSet {
            left_eye: at(Self::LEFT_EYE),
            right_eye: at(Self::RIGHT_EYE),
            nose: at(Self::NOSE),
            mouth: at(Self::MOUTH),
        }
    }
}

impl LandmarkDetector for CanonicalLandmarks {
    fn detect(&self, image: &ImagePlane) -> Result<LandmarkSet> {
        Ok(Self::for_shape(image.shape()))
    }
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum LandmarkResponse {
    Found {
        left_eye: [f64; 2],
        right_eye: [f64; 2],
        nose: [f64; 2],
        mouth: [f64; 2],
    },
    NoFace {
        face: bool,
    },
}

/// Parses a detector reply: either the four `[x, y]` points or `{"face": false}`.
pub fn parse_landmark_response(body: &str, shape: Shape) -> Result<LandmarkSet> {
    let reply: LandmarkResponse = serde_json::from_str(body)
        .map_err(|e| Error::Detection(format!("malformed detector reply: {e}")))?;
    match reply {
        LandmarkResponse::NoFace { face } => Err(Error::Detection(if face {
            "detector reported a face but returned no landmarks".into()
        } else {
            "no face detected".into()
        })),
        LandmarkResponse::Found {
            left_eye,
            right_eye,
            nose,
            mouth,
        } => {
            let to_point = |[x, y]: [f64; 2]| -> Result<Point> {
                if !(x.is_finite() && y.is_finite()) || x < 0.0 || y < 0.0 {
                    return Err(Error::Detection(format!("invalid landmark [{x}, {y}]")));
                }
                Ok(Point {
                    x: x.floor() as usize,
                    y: y.floor() as usize,
                })
            };
            let set = LandmarkSet {
                left_eye: to_point(left_eye)?,
                right_eye: to_point(right_eye)?,
                nose: to_point(nose)?,
                mouth: to_point(mouth)?,
            };
            set.validate(shape)
                .map_err(|e| Error::Detection(e.to_string()))?;
            Ok(set)
        }
    }
}

/// Remote landmark detector: POSTs the image as PNG and parses the JSON reply.
#[derive(Debug, Clone)]
pub struct HttpLandmarkDetector {
    pub endpoint: String,
    pub timeout: Duration,
}

impl HttpLandmarkDetector {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        HttpLandmarkDetector {
            endpoint: endpoint.into(),
            timeout,
        }
    }
}

impl LandmarkDetector for HttpLandmarkDetector {
    fn detect(&self, image: &ImagePlane) -> Result<LandmarkSet> {
        let png = image.encode_png()?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .build()
            .into();
        let mut response = agent
            .post(&self.endpoint)
            .header("Content-Type", "image/png")
            .send(&png[..])
            .map_err(|e| Error::Detection(format!("landmark service: {e}")))?;
        let body = response
            .body_mut()
            .read_to_string()
            .map_err(|e| Error::Detection(format!("landmark service body: {e}")))?;
        parse_landmark_response(&body, image.shape())
    }
}
