//! Domain types shared across the optimizer: prompts, scored candidates,
//! hints and the validated run configuration.

use std::fmt;
use std::str::FromStr;

use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use unicode_normalization::UnicodeNormalization;

use crate::backends::RetryPolicy;
use crate::error::ConfigError;
use crate::testbed::TestbedConfig;

/// A normalized, single-line, nonempty prompt.
///
/// Normalization is Unicode NFC followed by collapsing every whitespace run
/// (including newlines) into a single ASCII space and trimming.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Prompt(String);

impl Prompt {
    pub fn new(text: &str) -> Option<Self> {
        let normalized = normalize_text(text);
        if normalized.is_empty() {
            None
        } else {
            Some(Self(normalized))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn word_count(&self) -> usize {
        word_count(&self.0)
    }
}

impl fmt::Display for Prompt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Serialize for Prompt {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for Prompt {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        Prompt::new(&raw).ok_or_else(|| de::Error::custom("prompt must contain a non-whitespace character"))
    }
}

/// NFC + whitespace collapse.
pub fn normalize_text(text: &str) -> String {
    let nfc: String = text.nfc().collect();
    nfc.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Number of maximal non-whitespace runs.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Identifies a candidate within a run as `(iteration, candidate_index)`.
///
/// Serialized as `"<iteration>.<index>"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CandidateKey {
    pub iteration: u32,
    pub index: u32,
}

impl CandidateKey {
    pub fn new(iteration: u32, index: u32) -> Self {
        Self { iteration, index }
    }
}

impl fmt::Display for CandidateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.iteration, self.index)
    }
}

impl FromStr for CandidateKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (it, idx) = s.split_once('.').ok_or_else(|| format!("bad candidate key `{s}`"))?;
        let iteration = it.parse().map_err(|_| format!("bad candidate key `{s}`"))?;
        let index = idx.parse().map_err(|_| format!("bad candidate key `{s}`"))?;
        Ok(Self { iteration, index })
    }
}

impl Serialize for CandidateKey {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CandidateKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateSource {
    Initial,
    Optimizer,
    Paraphrase,
    RuleBased,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateStatus {
    #[default]
    Scored,
    /// Evaluation failed after retries. The candidate still counts against
    /// the budget but never enters a context or wins `best_of`.
    Failed,
}

/// A prompt together with its per-seed rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub prompt: Prompt,
    pub per_seed_scores: Vec<f64>,
    pub mean_score: f64,
    pub iteration: u32,
    pub candidate_index: u32,
    pub source: CandidateSource,
    #[serde(default, skip_serializing_if = "is_scored")]
    pub status: CandidateStatus,
}

fn is_scored(status: &CandidateStatus) -> bool {
    *status == CandidateStatus::Scored
}

impl ScoredCandidate {
    pub fn scored(
        prompt: Prompt,
        per_seed_scores: Vec<f64>,
        iteration: u32,
        candidate_index: u32,
        source: CandidateSource,
    ) -> Self {
        let mean_score = mean(&per_seed_scores);
        Self {
            prompt,
            per_seed_scores,
            mean_score,
            iteration,
            candidate_index,
            source,
            status: CandidateStatus::Scored,
        }
    }

    /// A candidate whose evaluation failed. Its score fields are empty/zero.
    pub fn failed(prompt: Prompt, iteration: u32, candidate_index: u32, source: CandidateSource) -> Self {
        Self {
            prompt,
            per_seed_scores: Vec::new(),
            mean_score: 0.0,
            iteration,
            candidate_index,
            source,
            status: CandidateStatus::Failed,
        }
    }

    pub fn key(&self) -> CandidateKey {
        CandidateKey::new(self.iteration, self.candidate_index)
    }

    pub fn is_failed(&self) -> bool {
        self.status == CandidateStatus::Failed
    }

    /// `Some(mean_score)` unless the evaluation failed.
    pub fn score(&self) -> Option<f64> {
        (!self.is_failed()).then_some(self.mean_score)
    }
}

/// Arithmetic mean; 0.0 for an empty slice.
pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// A one-line strategy produced by the hint generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hint {
    pub text: String,
    pub iteration: u32,
    pub context_ids: Vec<CandidateKey>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Rattpo,
    RattpoNoHint,
    RattpoExtraHistory,
    RattpoHintTransfer,
    Paraphrase,
    RuleBased,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Rattpo,
        Method::RattpoNoHint,
        Method::RattpoExtraHistory,
        Method::RattpoHintTransfer,
        Method::Paraphrase,
        Method::RuleBased,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Rattpo => "rattpo",
            Method::RattpoNoHint => "rattpo_no_hint",
            Method::RattpoExtraHistory => "rattpo_extra_history",
            Method::RattpoHintTransfer => "rattpo_hint_transfer",
            Method::Paraphrase => "paraphrase",
            Method::RuleBased => "rule_based",
        }
    }

    /// Whether the hint generator is queried during the run.
    pub fn generates_hints(self) -> bool {
        self == Method::Rattpo
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown method `{s}`"))
    }
}

/// Context size that may be unbounded. Serialized as an integer or `"all"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ContextSize {
    Count(usize),
    All,
}

impl ContextSize {
    pub fn is_zero(self) -> bool {
        self == ContextSize::Count(0)
    }

    /// Clamp against an available count.
    pub fn resolve(self, available: usize) -> usize {
        match self {
            ContextSize::Count(k) => k.min(available),
            ContextSize::All => available,
        }
    }
}

impl Serialize for ContextSize {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            ContextSize::Count(k) => s.serialize_u64(*k as u64),
            ContextSize::All => s.serialize_str("all"),
        }
    }
}

impl<'de> Deserialize<'de> for ContextSize {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match Value::deserialize(d)? {
            Value::Number(n) => n
                .as_u64()
                .map(|k| ContextSize::Count(k as usize))
                .ok_or_else(|| de::Error::custom("context size must be a nonnegative integer or \"all\"")),
            Value::String(s) if s.eq_ignore_ascii_case("all") => Ok(ContextSize::All),
            _ => Err(de::Error::custom("context size must be a nonnegative integer or \"all\"")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextStrategy {
    #[default]
    Random,
    Best,
}

/// Chat-completion endpoint for one text-model role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextModelEndpoint {
    pub base_url: String,
    pub model: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluatorEndpoint {
    pub base_url: String,
    pub reward: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpBackendsConfig {
    pub optimizer: TextModelEndpoint,
    pub hint: TextModelEndpoint,
    pub evaluator: EvaluatorEndpoint,
    #[serde(default)]
    pub retry: RetryPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendsConfig {
    Http(HttpBackendsConfig),
    Testbed(TestbedConfig),
}

impl Default for BackendsConfig {
    fn default() -> Self {
        BackendsConfig::Testbed(TestbedConfig::default())
    }
}

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_ITERATIONS: u32 = 20;
pub const DEFAULT_CANDIDATES: u32 = 8;
pub const DEFAULT_OPTIMIZER_CONTEXT: usize = 8;
pub const DEFAULT_HINT_CONTEXT: usize = 20;
pub const DEFAULT_MAX_WORDS: usize = 70;
pub const DEFAULT_SEEDS: [u64; 3] = [0, 1, 2];

/// A fully validated run configuration with all defaults applied.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub schema_version: u32,
    pub initial_prompt: Prompt,
    pub method: Method,
    pub iterations: u32,
    pub candidates_per_iteration: u32,
    pub optimizer_context_k: usize,
    pub hint_context_k: ContextSize,
    pub hint_context_strategy: ContextStrategy,
    pub seeds: Vec<u64>,
    pub max_variation_words: usize,
    pub rng_seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transfer_hints: Option<Vec<String>>,
    /// Upper bound on concurrent evaluate calls; `None` means one per candidate.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parallelism: Option<usize>,
    pub backends: BackendsConfig,
}

impl RunConfig {
    /// A config with every default applied for the given prompt.
    pub fn new(initial_prompt: Prompt) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            initial_prompt,
            method: Method::Rattpo,
            iterations: DEFAULT_ITERATIONS,
            candidates_per_iteration: DEFAULT_CANDIDATES,
            optimizer_context_k: DEFAULT_OPTIMIZER_CONTEXT,
            hint_context_k: ContextSize::Count(DEFAULT_HINT_CONTEXT),
            hint_context_strategy: ContextStrategy::Random,
            seeds: DEFAULT_SEEDS.to_vec(),
            max_variation_words: DEFAULT_MAX_WORDS,
            rng_seed: 0,
            transfer_hints: None,
            parallelism: None,
            backends: BackendsConfig::default(),
        }
    }

    /// Total prompt budget `N * K`.
    pub fn budget(&self) -> u64 {
        u64::from(self.iterations) * u64::from(self.candidates_per_iteration)
    }

    pub fn parallelism(&self) -> usize {
        self.parallelism.unwrap_or(self.candidates_per_iteration as usize).max(1)
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("RunConfig serializes")
    }

    /// Check every cross-field invariant.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::InvalidValue {
                field: "schema_version",
                reason: format!("unsupported schema version {}", self.schema_version),
            });
        }
        if self.iterations == 0 {
            return Err(invalid("iterations", "must be positive"));
        }
        if self.candidates_per_iteration == 0 {
            return Err(invalid("candidates_per_iteration", "must be positive"));
        }
        if self.max_variation_words == 0 {
            return Err(invalid("max_variation_words", "must be positive"));
        }
        if self.seeds.is_empty() {
            return Err(invalid("seeds", "must be nonempty"));
        }
        let budget = self.budget();
        if self.optimizer_context_k as u64 > budget {
            return Err(invalid("optimizer_context_k", &format!("must be at most the budget {budget}")));
        }
        if let ContextSize::Count(k) = self.hint_context_k {
            if k as u64 > budget {
                return Err(invalid("hint_context_k", &format!("must be \"all\" or at most the budget {budget}")));
            }
        }
        if self.parallelism == Some(0) {
            return Err(invalid("parallelism", "must be positive"));
        }
        match (&self.method, &self.transfer_hints) {
            (Method::RattpoHintTransfer, None) => return Err(ConfigError::TransferHintsRequired),
            (Method::RattpoHintTransfer, Some(h)) if h.is_empty() => return Err(ConfigError::TransferHintsRequired),
            (Method::RattpoHintTransfer, Some(h)) if h.iter().any(|s| s.trim().is_empty()) => {
                return Err(invalid("transfer_hints", "hints must be nonempty"))
            }
            (m, Some(_)) if *m != Method::RattpoHintTransfer => {
                return Err(invalid("transfer_hints", "only allowed with method rattpo_hint_transfer"))
            }
            _ => {}
        }
        if let BackendsConfig::Testbed(t) = &self.backends {
            t.validate()?;
        }
        if let BackendsConfig::Http(h) = &self.backends {
            if h.retry.max_attempts == 0 {
                return Err(invalid("backends.retry.max_attempts", "must be at least 1"));
            }
        }
        Ok(())
    }
}

fn invalid(field: &'static str, reason: &str) -> ConfigError {
    ConfigError::InvalidValue {
        field,
        reason: reason.to_string(),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    schema_version: Option<u32>,
    initial_prompt: Option<Value>,
    method: Option<Method>,
    iterations: Option<u32>,
    candidates_per_iteration: Option<u32>,
    optimizer_context_k: Option<usize>,
    hint_context_k: Option<ContextSize>,
    hint_context_strategy: Option<ContextStrategy>,
    seeds: Option<Vec<u64>>,
    max_variation_words: Option<usize>,
    rng_seed: Option<u64>,
    transfer_hints: Option<Vec<String>>,
    parallelism: Option<usize>,
    backends: Option<BackendsConfig>,
}

/// Parse a raw JSON config document, apply defaults and validate.
pub fn validate_config(raw: &Value) -> Result<RunConfig, ConfigError> {
    if !raw.is_object() {
        return Err(ConfigError::Malformed("config must be a JSON object".into()));
    }
    let raw: RawConfig =
        serde_json::from_value(raw.clone()).map_err(|e| ConfigError::Malformed(e.to_string()))?;
    let prompt_text = match raw.initial_prompt {
        None | Some(Value::Null) => return Err(ConfigError::MissingField("initial_prompt")),
        Some(Value::String(s)) => s,
        Some(_) => return Err(invalid("initial_prompt", "must be a string")),
    };
    let initial_prompt =
        Prompt::new(&prompt_text).ok_or_else(|| invalid("initial_prompt", "must contain a non-whitespace character"))?;

    let mut config = RunConfig::new(initial_prompt);
    macro_rules! apply {
        ($($field:ident),*) => { $( if let Some(v) = raw.$field { config.$field = v; } )* };
    }
    apply!(
        schema_version,
        method,
        iterations,
        candidates_per_iteration,
        optimizer_context_k,
        hint_context_k,
        hint_context_strategy,
        seeds,
        max_variation_words,
        rng_seed,
        backends
    );
    config.transfer_hints = raw.transfer_hints;
    config.parallelism = raw.parallelism;
    config.validate()?;
    Ok(config)
}

impl<'de> Deserialize<'de> for RunConfig {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let value = Value::deserialize(d)?;
        validate_config(&value).map_err(de::Error::custom)
    }
}
