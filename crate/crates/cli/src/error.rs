use std::path::PathBuf;

use promptsearch::{ConfigError, EngineError, MetricsError, TraceError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("bad --set override `{0}`: expected key=value")]
    Override(String),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Engine(EngineError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Trace {
        path: PathBuf,
        #[source]
        source: TraceError,
    },
    #[error("no traces match `{0}`")]
    NoTraces(String),
    #[error("traces mix candidates_per_iteration values {0:?}; curves need one K")]
    MixedConfigs(Vec<u32>),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{0}")]
    Pairing(String),
    #[error("{failed} of {total} batch runs failed")]
    Batch { failed: usize, total: usize, code: i32 },
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Engine(EngineError::BackendUnavailable { .. }) => 3,
            CliError::Engine(EngineError::Config(_)) => 2,
            CliError::Engine(EngineError::Trace(_)) | CliError::Io { .. } => 4,
            CliError::Engine(EngineError::History(_)) => 4,
            CliError::Trace { source: TraceError::Io(_), .. } => 4,
            CliError::Batch { code, .. } => *code,
            CliError::Config(_)
            | CliError::Override(_)
            | CliError::Usage(_)
            | CliError::Trace { .. }
            | CliError::NoTraces(_)
            | CliError::MixedConfigs(_)
            | CliError::Metrics(_)
            | CliError::Pairing(_) => 2,
        }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        CliError::Engine(e)
    }
}
