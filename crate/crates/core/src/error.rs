use thiserror::Error;

use crate::property::ParseError;
use crate::scg::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid ODD: {0}")]
    InvalidOdd(String),

    #[error("unknown id `{0}`")]
    NotFound(String),

    #[error("`{id}` is a {actual}, expected a {expected}")]
    WrongKind {
        id: String,
        expected: &'static str,
        actual: &'static str,
    },

    #[error("malformed augmented SCG: {}", format_violations(.0))]
    InvalidScg(Vec<Violation>),

    #[error("malformed model: {0}")]
    InvalidModel(String),

    #[error("unknown label `{0}`")]
    UnknownLabel(String),

    #[error(transparent)]
    Parse(#[from] ParseError),

    #[error("situation `{0}` is a sink state")]
    SunkSituation(String),

    #[error("no candidate controllers")]
    NoCandidates,

    #[error("timestep {got} precedes last seen timestep {last}")]
    OutOfOrder { got: u64, last: u64 },

    #[error("invalid trace: {0}")]
    InvalidTrace(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn format_violations(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

/// Deserialises `text` as JSON, reporting the document path of the first
/// schema violation.
pub fn from_json_str<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    let mut de = serde_json::Deserializer::from_str(text);
    let value = serde_path_to_error::deserialize(&mut de).map_err(|err| Error::Schema {
        path: err.path().to_string(),
        message: err.inner().to_string(),
    })?;
    de.end().map_err(|err| Error::Schema {
        path: ".".into(),
        message: err.to_string(),
    })?;
    Ok(value)
}
