use thiserror::Error;

use crate::model::CandidateKey;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("missing required field `{0}`")]
    MissingField(&'static str),
    #[error("invalid value for `{field}`: {reason}")]
    InvalidValue { field: &'static str, reason: String },
    #[error("method rattpo_hint_transfer requires a nonempty `transfer_hints` list")]
    TransferHintsRequired,
    #[error("malformed config: {0}")]
    Malformed(String),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HistoryError {
    #[error("candidate {0} already recorded")]
    DuplicateCandidateKey(CandidateKey),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetapromptError {
    #[error("hint query needs at least one history entry")]
    EmptyContext,
    #[error("no numbered variations found in response")]
    NoVariationsFound,
    #[error("empty hint response")]
    EmptyResponse,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("request timed out")]
    Timeout,
    #[error("transport error: {0}")]
    TransportError(String),
    #[error("unexpected HTTP status {0}")]
    BadStatus(u16),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("expected {expected} per-seed scores, got {actual}")]
    ScoreShapeMismatch { expected: usize, actual: usize },
}

impl BackendError {
    /// Transport failures, timeouts and 5xx responses are worth another attempt.
    pub fn is_retriable(&self) -> bool {
        match self {
            BackendError::Timeout | BackendError::TransportError(_) => true,
            BackendError::BadStatus(code) => *code == 429 || *code >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("{role} backend unavailable: {source}")]
    BackendUnavailable {
        role: &'static str,
        #[source]
        source: BackendError,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("trace sink failed: {0}")]
    Trace(#[from] TraceError),
    #[error(transparent)]
    History(#[from] HistoryError),
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("trace must start with exactly one run_meta event")]
    MissingMeta,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("trace contains no candidate events")]
    EmptyTrace,
    #[error("trace is incomplete: {0}")]
    IncompleteTrace(String),
    #[error("curves do not share the same x grid")]
    GridMismatch,
    #[error("no curves to aggregate")]
    NoCurves,
}
