use std::path::PathBuf;

use thiserror::Error;

use crate::condense::CondenseError;
use crate::efa::EfaError;
use crate::export::ExportError;
use crate::ingest::IngestError;
use crate::scoring::ScoringError;
use crate::synth::SynthError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Pipeline-level error, tagged with the module that raised it.
#[derive(Debug, Error)]
pub enum Error {
    #[error("ingest: {0}")]
    Ingest(#[from] IngestError),
    #[error("condense: {0}")]
    Condense(#[from] CondenseError),
    #[error("efa: {0}")]
    Efa(#[from] EfaError),
    #[error("scoring: {0}")]
    Scoring(#[from] ScoringError),
    #[error("synth: {0}")]
    Synth(#[from] SynthError),
    #[error("export: {0}")]
    Export(#[from] ExportError),
    #[error("config: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 usage, 2 data, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Efa(_) | Error::Scoring(_) => 3,
            Error::Ingest(_)
            | Error::Condense(_)
            | Error::Synth(_)
            | Error::Export(_)
            | Error::Io { .. } => 2,
        }
    }
}
