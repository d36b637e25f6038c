//! Reward-agnostic test-time prompt optimization for text-to-image pipelines.
//!
//! An optimizer text model proposes prompt variations conditioned on the
//! best prompts found so far and on a one-line hint; a hint-generator text
//! model writes that hint from a random sample of scored history. Scores come
//! from an arbitrary black-box evaluator (image generation plus reward).
//!
//! The [`testbed`] module provides deterministic, GPU-free backends so the
//! whole loop runs in tests.

pub mod backends;
pub mod engine;
pub mod error;
pub mod history;
pub mod metaprompt;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod testbed;
pub mod trace;

pub use backends::{Backends, Evaluator, RetryPolicy, TextModel};
pub use engine::{best_of, rule_based_candidates, run, RunResult};
pub use error::{BackendError, ConfigError, EngineError, HistoryError, MetapromptError, MetricsError, TraceError};
pub use history::History;
pub use model::{validate_config, Method, Prompt, RunConfig, ScoredCandidate};
pub use trace::{Trace, TraceEvent, TraceSink};
