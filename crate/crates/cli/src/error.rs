use std::path::Path;

use fedstream::federation::FederationError;
use fedstream::model::EnvelopeError;
use fedstream::pipeline::PipelineError;
use fedstream::simulator::SimError;
use fedstream::ModelError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("model mismatch: {0}")]
    Mismatch(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Mismatch(_) => 4,
        }
    }

    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::InvalidConfig(_) | ModelError::InvalidWeights(_) => CliError::Config(e.to_string()),
            ModelError::Envelope(EnvelopeError::Io(msg)) => CliError::Io(msg),
            ModelError::Envelope(_) => CliError::Io(e.to_string()),
            _ => CliError::Mismatch(e.to_string()),
        }
    }
}

impl From<FederationError> for CliError {
    fn from(e: FederationError) -> Self {
        match e {
            FederationError::Model(m) => m.into(),
            FederationError::SchemaMismatch { .. } | FederationError::KindMismatch { .. } => {
                CliError::Mismatch(e.to_string())
            }
            FederationError::Io(_) | FederationError::Timeout(_) => CliError::Io(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(msg) => CliError::Config(msg),
            PipelineError::Model(m) => m.into(),
            PipelineError::Federation(f) => f.into(),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(msg) => CliError::Config(msg),
            SimError::Pipeline(p) => p.into(),
            SimError::Federation(f) => f.into(),
            SimError::Model(m) => m.into(),
            SimError::ThreadPanic => CliError::Io(e.to_string()),
        }
    }
}
