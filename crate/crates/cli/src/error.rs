use std::path::PathBuf;

use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error{}: {message}", field.as_ref().map(|f| format!(" in `{f}`")).unwrap_or_default())]
    Config {
        field: Option<String>,
        message: String,
    },

    #[error(transparent)]
    Analysis(#[from] wavetrack::Error),

    #[error("cannot write {path}: {source}")]
    Output {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn field(field: &str, message: impl Into<String>) -> Self {
        CliError::Config {
            field: Some(field.into()),
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config { .. } => 2,
            _ => 1,
        }
    }

    /// One-line JSON form printed to stderr.
    pub fn to_json(&self) -> serde_json::Value {
        match self {
            CliError::Config { field, message } => json!({
                "kind": "config",
                "field": field,
                "message": message,
            }),
            CliError::Analysis(e) => json!({
                "kind": "analysis",
                "message": e.to_string(),
            }),
            CliError::Output { path, source } => json!({
                "kind": "output",
                "path": path,
                "message": source.to_string(),
            }),
        }
    }
}
