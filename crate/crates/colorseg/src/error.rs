//! CLI-facing error type. Every failure leaves through one of these, and
//! the binary prints them as one machine-parsable line:
//! `error[CODE]: human message`.

use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad configuration: unknown keys, unparsable values, invalid ranges.
    #[error("error[E_CONFIG]: {0}")]
    Config(String),
    /// Dataset problems: missing directories, mismatched image/label pairs.
    #[error("error[E_DATA]: {0}")]
    Data(String),
    /// Malformed file contents (headers, truncation, wrong bit depth).
    #[error("error[E_FORMAT]: {0}")]
    Format(String),
    /// Filesystem failures, annotated with the path.
    #[error("error[E_IO]: {0}")]
    Io(String),
    /// Dimension mismatches between tensors, images, and configs.
    #[error("error[E_SHAPE]: {0}")]
    Shape(String),
    /// Non-finite values where finite ones are required (e.g. training loss).
    #[error("error[E_NUMERIC]: {0}")]
    Numeric(String),
    /// Checkpoint encode/decode failures.
    #[error("error[E_CHECKPOINT]: {0}")]
    Checkpoint(String),
}

impl CliError {
    pub fn io(path: &Path, err: std::io::Error) -> CliError {
        CliError::Io(format!("{}: {err}", path.display()))
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
