//! Identity-specific adversarial cloaks for face images.
//!
//! A cloak is optimized once per person from a single seed image and a few
//! augmented variants, then added to any image of that person to push its
//! embedding toward a distant identity.

pub mod backends;
pub mod cloak;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod focusing;
pub mod ingestion;
pub mod optimizer;
pub mod pipeline;
pub mod plane;
pub mod synthgen;
pub mod types;

pub use cloak::{load_cloak, read_cloak_header, save_cloak, BudgetMap, CloakHeader, CloakMask};
pub use error::{Error, Result};
pub use plane::{ImagePlane, RawImage, Shape};
pub use types::{Embedding, IdentityLabel, LabeledImage};
