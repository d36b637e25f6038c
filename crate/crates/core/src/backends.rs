//! Text-model and evaluator contracts, their HTTP realizations and mocks.
//!
//! Text models speak the common chat-completion wire format
//! (`POST {base}/v1/chat/completions`). Evaluators fuse image generation and
//! reward scoring behind `POST {base}/evaluate`, so images never reach the
//! engine.

use std::sync::atomic::{AtomicU32, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::BackendError;
use crate::model::Prompt;

pub const API_KEY_ENV: &str = "PROMPTSEARCH_LLM_API_KEY";

/// Optimizer or hint-generator language model.
pub trait TextModel: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, BackendError>;
    fn id(&self) -> &str;
}

/// Image generation plus reward, one score per noise seed.
pub trait Evaluator: Send + Sync {
    fn evaluate(&self, prompt: &Prompt, initial_prompt: &Prompt, seeds: &[u64]) -> Result<Vec<f64>, BackendError>;
    fn id(&self) -> &str;
    fn deterministic(&self) -> bool {
        false
    }
}

/// The three backends one run talks to.
#[derive(Clone, Copy)]
pub struct Backends<'a> {
    pub optimizer: &'a dyn TextModel,
    pub hint: &'a dyn TextModel,
    pub evaluator: &'a dyn Evaluator,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff_ms: u64,
    pub timeout_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            backoff_ms: 500,
            timeout_ms: 120_000,
        }
    }
}

impl RetryPolicy {
    /// Delay before attempt `attempt` (1-based; the first attempt has none).
    pub fn delay(&self, attempt: u32) -> Duration {
        if attempt <= 1 {
            return Duration::ZERO;
        }
        let factor = 1u64.checked_shl(attempt - 2).unwrap_or(u64::MAX);
        Duration::from_millis(self.backoff_ms.saturating_mul(factor))
    }

    /// Run `call` until it succeeds, fails with a non-retriable error or
    /// attempts run out. Returns the result and the number of attempts made.
    pub fn run<T>(&self, mut call: impl FnMut() -> Result<T, BackendError>) -> (Result<T, BackendError>, u32) {
        let max = self.max_attempts.max(1);
        let mut attempt = 1;
        loop {
            std::thread::sleep(self.delay(attempt));
            match call() {
                Ok(v) => return (Ok(v), attempt),
                Err(e) if e.is_retriable() && attempt < max => {
                    log::warn!("attempt {attempt}/{max} failed: {e}; retrying");
                    attempt += 1;
                }
                Err(e) => return (Err(e), attempt),
            }
        }
    }
}

fn agent(policy: &RetryPolicy) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_millis(policy.timeout_ms)))
        .http_status_as_error(false)
        .build()
        .into()
}

fn map_transport(e: ureq::Error) -> BackendError {
    match e {
        ureq::Error::Timeout(_) => BackendError::Timeout,
        ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => BackendError::Timeout,
        ureq::Error::StatusCode(code) => BackendError::BadStatus(code),
        ureq::Error::Json(e) => BackendError::MalformedResponse(e.to_string()),
        other => BackendError::TransportError(other.to_string()),
    }
}

fn post_json(agent: &ureq::Agent, url: &str, body: &Value, bearer: Option<&str>) -> Result<Value, BackendError> {
    let mut request = agent.post(url);
    if let Some(token) = bearer {
        request = request.header("Authorization", &format!("Bearer {token}"));
    }
    let mut response = request.send_json(body).map_err(map_transport)?;
    let status = response.status().as_u16();
    if !(200..300).contains(&status) {
        return Err(BackendError::BadStatus(status));
    }
    response
        .body_mut()
        .read_json::<Value>()
        .map_err(|e| match map_transport(e) {
            BackendError::TransportError(m) => BackendError::MalformedResponse(m),
            other => other,
        })
}

fn join_url(base: &str, path: &str) -> String {
    format!("{}/{}", base.trim_end_matches('/'), path.trim_start_matches('/'))
}

/// Chat-completion client.
pub struct HttpTextModel {
    agent: ureq::Agent,
    url: String,
    model: String,
    api_key: Option<String>,
    policy: RetryPolicy,
    attempts: AtomicU32,
}

impl HttpTextModel {
    pub fn new(base_url: &str, model: &str, policy: RetryPolicy) -> Self {
        Self {
            agent: agent(&policy),
            url: join_url(base_url, "v1/chat/completions"),
            model: model.to_string(),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            policy,
            attempts: AtomicU32::new(0),
        }
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    /// Total HTTP attempts made by this client so far.
    pub fn attempts(&self) -> u32 {
        self.attempts.load(Ordering::Relaxed)
    }
}

pub fn chat_request_body(model: &str, prompt: &str) -> Value {
    json!({
        "model": model,
        "messages": [{"role": "user", "content": prompt}],
    })
}

/// `choices[0].message.content` of a chat-completion response.
pub fn extract_chat_content(response: &Value) -> Result<String, BackendError> {
    response
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| BackendError::MalformedResponse("missing choices[0].message.content".into()))
}

impl TextModel for HttpTextModel {
    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        let body = chat_request_body(&self.model, prompt);
        let (result, attempts) = self.policy.run(|| {
            let response = post_json(&self.agent, &self.url, &body, self.api_key.as_deref())?;
            extract_chat_content(&response)
        });
        self.attempts.fetch_add(attempts, Ordering::Relaxed);
        result
    }

    fn id(&self) -> &str {
        &self.model
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateRequest {
    pub prompt: String,
    pub initial_prompt: String,
    pub seeds: Vec<u64>,
    pub reward: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateResponse {
    pub per_seed: Vec<f64>,
    pub reward: String,
    pub deterministic: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub rewards: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
}

/// Client for the reward bridge's `/evaluate` endpoint.
pub struct HttpEvaluator {
    agent: ureq::Agent,
    base_url: String,
    reward: String,
    policy: RetryPolicy,
    attempts: AtomicU32,
    deterministic: std::sync::atomic::AtomicBool,
}

impl HttpEvaluator {
    pub fn new(base_url: &str, reward: &str, policy: RetryPolicy) -> Self {
        Self {
            agent: agent(&policy),
            base_url: base_url.to_string(),
            reward: reward.to_string(),
            policy,
            attempts: AtomicU32::new(0),
            deterministic: std::sync::atomic::AtomicBool::new(false),
        }
    }

    pub fn attempts(&self) -> u32 {
        self.attempts.load(Ordering::Relaxed)
    }

    pub fn health(&self) -> Result<HealthResponse, BackendError> {
        let url = join_url(&self.base_url, "health");
        let (result, _) = self.policy.run(|| {
            let mut response = self.agent.get(&url).call().map_err(map_transport)?;
            let status = response.status().as_u16();
            if status != 200 {
                return Err(BackendError::BadStatus(status));
            }
            response
                .body_mut()
                .read_json::<HealthResponse>()
                .map_err(|e| BackendError::MalformedResponse(e.to_string()))
        });
        result
    }
}

impl Evaluator for HttpEvaluator {
    fn evaluate(&self, prompt: &Prompt, initial_prompt: &Prompt, seeds: &[u64]) -> Result<Vec<f64>, BackendError> {
        let request = EvaluateRequest {
            prompt: prompt.to_string(),
            initial_prompt: initial_prompt.to_string(),
            seeds: seeds.to_vec(),
            reward: self.reward.clone(),
        };
        let body = serde_json::to_value(&request).expect("request serializes");
        let url = join_url(&self.base_url, "evaluate");
        let (result, attempts) = self.policy.run(|| {
            let raw = post_json(&self.agent, &url, &body, None)?;
            let response: EvaluateResponse =
                serde_json::from_value(raw).map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
            if response.per_seed.len() != seeds.len() {
                return Err(BackendError::ScoreShapeMismatch {
                    expected: seeds.len(),
                    actual: response.per_seed.len(),
                });
            }
            Ok(response)
        });
        self.attempts.fetch_add(attempts, Ordering::Relaxed);
        let response = result?;
        self.deterministic.store(response.deterministic, Ordering::Relaxed);
        Ok(response.per_seed)
    }

    fn id(&self) -> &str {
        &self.reward
    }

    fn deterministic(&self) -> bool {
        self.deterministic.load(Ordering::Relaxed)
    }
}

/// Deterministic in-process stand-ins for tests.
pub mod mock {
    use std::collections::VecDeque;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Mutex;

    use super::*;

    type Respond = dyn Fn(&str) -> Result<String, BackendError> + Send + Sync;

    /// Text model answering through a closure; records every prompt it sees.
    pub struct MockTextModel {
        id: String,
        respond: Box<Respond>,
        log: Mutex<Vec<String>>,
    }

    impl MockTextModel {
        pub fn new(id: &str, respond: impl Fn(&str) -> Result<String, BackendError> + Send + Sync + 'static) -> Self {
            Self {
                id: id.to_string(),
                respond: Box::new(respond),
                log: Mutex::new(Vec::new()),
            }
        }

        /// Always answers with the same text.
        pub fn fixed(id: &str, text: &str) -> Self {
            let text = text.to_string();
            Self::new(id, move |_| Ok(text.clone()))
        }

        /// Answers with `n` numbered variations derived from a call counter.
        pub fn numbered(id: &str, n: usize) -> Self {
            let counter = AtomicUsize::new(0);
            Self::new(id, move |_| {
                let call = counter.fetch_add(1, Ordering::Relaxed);
                Ok((1..=n).map(|i| format!("{i}. variation {call} {i}")).collect::<Vec<_>>().join("\n"))
            })
        }

        /// Replays scripted responses in order, then repeats the last one.
        pub fn scripted(id: &str, responses: Vec<Result<String, BackendError>>) -> Self {
            let queue = Mutex::new(VecDeque::from(responses));
            Self::new(id, move |_| {
                let mut q = queue.lock().unwrap();
                if q.len() > 1 {
                    q.pop_front().unwrap()
                } else {
                    q.front().cloned().unwrap_or_else(|| Err(BackendError::TransportError("script exhausted".into())))
                }
            })
        }

        pub fn calls(&self) -> Vec<String> {
            self.log.lock().unwrap().clone()
        }
    }

    impl TextModel for MockTextModel {
        fn complete(&self, prompt: &str) -> Result<String, BackendError> {
            self.log.lock().unwrap().push(prompt.to_string());
            (self.respond)(prompt)
        }

        fn id(&self) -> &str {
            &self.id
        }
    }

    type Score = dyn Fn(&Prompt, u64) -> Result<f64, BackendError> + Send + Sync;

    /// Evaluator scoring each (prompt, seed) through a closure.
    pub struct MockEvaluator {
        id: String,
        score: Box<Score>,
        calls: AtomicUsize,
    }

    impl MockEvaluator {
        pub fn new(id: &str, score: impl Fn(&Prompt, u64) -> Result<f64, BackendError> + Send + Sync + 'static) -> Self {
            Self {
                id: id.to_string(),
                score: Box::new(score),
                calls: AtomicUsize::new(0),
            }
        }

        /// Score = prompt length in characters divided by 100.
        pub fn by_length(id: &str) -> Self {
            Self::new(id, |p, _| Ok(p.as_str().chars().count() as f64 / 100.0))
        }

        pub fn calls(&self) -> usize {
            self.calls.load(Ordering::Relaxed)
        }
    }

    impl Evaluator for MockEvaluator {
        fn evaluate(&self, prompt: &Prompt, _initial: &Prompt, seeds: &[u64]) -> Result<Vec<f64>, BackendError> {
            self.calls.fetch_add(1, Ordering::Relaxed);
            seeds.iter().map(|&s| (self.score)(prompt, s)).collect()
        }

        fn id(&self) -> &str {
            &self.id
        }

        fn deterministic(&self) -> bool {
            true
        }
    }
}
