use std::fmt;

use facecloak::Error;
use serde::Serialize;

pub const EXIT_OK: i32 = 0;
/// Pipeline failures that are not config, data or backend problems.
pub const EXIT_PIPELINE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_BACKEND: i32 = 4;
pub const EXIT_PARTIAL: i32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Ingest,
    Backend,
    Generate,
    Apply,
    Eval,
    Ablate,
    Inspect,
    Train,
    Corpus,
}

/// What goes to stderr as one JSON object when a command fails.
#[derive(Debug, Clone, Serialize)]
pub struct CliError {
    pub stage: Stage,
    pub kind: String,
    pub message: String,
    #[serde(skip)]
    pub code: i32,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}/{}: {}", self.stage, self.kind, self.message)
    }
}

impl std::error::Error for CliError {}

pub fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::InvalidParameter(_) => EXIT_CONFIG,
        Error::Persistence { .. }
        | Error::MissingFile(_)
        | Error::CorruptHeader { .. }
        | Error::CorruptPayload { .. }
        | Error::ShapeMismatch { .. }
        | Error::Dataset(_)
        | Error::DatasetTooSmall(_)
        | Error::Decode { .. }
        | Error::Codec(_) => EXIT_DATA,
        Error::Backend { .. }
        | Error::Capability { .. }
        | Error::UnsupportedFormat { .. }
        | Error::Training { .. } => EXIT_BACKEND,
        _ => EXIT_PIPELINE,
    }
}

impl CliError {
    pub fn new(stage: Stage, e: Error) -> Self {
        CliError {
            stage,
            kind: e.kind().to_string(),
            message: e.to_string(),
            code: exit_code_for(&e),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        CliError {
            stage: Stage::Config,
            kind: "config".into(),
            message: message.into(),
            code: EXIT_CONFIG,
        }
    }

    /// Loading failures of a model file count as backend errors even when
    /// the underlying cause is a missing or unreadable file.
    pub fn backend(stage: Stage, e: Error) -> Self {
        CliError { code: EXIT_BACKEND, ..CliError::new(stage, e) }
    }

    pub fn partial(stage: Stage, message: impl Into<String>) -> Self {
        CliError {
            stage,
            kind: "partial_failure".into(),
            message: message.into(),
            code: EXIT_PARTIAL,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("error report serializes")
    }
}

/// `map_err` helper: tag a core error with the stage it came from.
pub fn at(stage: Stage) -> impl Fn(Error) -> CliError {
    move |e| CliError::new(stage, e)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_has_stage_kind_message() {
        let e = CliError::new(Stage::Apply, Error::Dataset("bad".into()));
        let v: serde_json::Value = serde_json::from_str(&e.to_json()).unwrap();
        assert_eq!(v["stage"], "apply");
        assert_eq!(v["kind"], "dataset");
        assert!(v["message"].as_str().unwrap().contains("bad"));
        assert_eq!(e.code, EXIT_DATA);
    }

    #[test]
    fn codes_by_category() {
        assert_eq!(exit_code_for(&Error::InvalidParameter("x".into())), EXIT_CONFIG);
        assert_eq!(
            exit_code_for(&Error::Training { reason: "x".into(), accuracy: 0.1 }),
            EXIT_BACKEND
        );
        assert_eq!(exit_code_for(&Error::Pool("x".into())), EXIT_PIPELINE);
    }
}
