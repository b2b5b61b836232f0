//! Error type shared by every pipeline stage.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A domain invariant was violated by caller input.
    #[error("validation: {0}")]
    Validation(String),

    /// A named entity, chunk or image was looked up but does not exist.
    #[error("not found: {0}")]
    NotFound(String),

    /// A store document failed to parse. Carries the file path and the
    /// offending key so a bad entry can be located by hand.
    #[error("parse error in {path} at key `{key}`: {message}")]
    Parse {
        path: PathBuf,
        key: String,
        message: String,
    },

    /// A prompt template was rendered with missing or unknown bindings.
    #[error("template: {0}")]
    Template(String),

    /// The model endpoint failed after all retries.
    #[error("gateway failure after {attempts} attempt(s): {message}")]
    Gateway { attempts: u32, message: String },

    /// Bad input supplied to an operation (unreadable image, empty batch, ...).
    #[error("input: {0}")]
    Input(String),

    /// An out-of-range algorithm parameter.
    #[error("parameter: {0}")]
    Parameter(String),

    /// A pipeline stage was invoked before its prerequisites were produced.
    #[error("missing prerequisite artifacts: {}", .0.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))]
    MissingArtifacts(Vec<PathBuf>),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
