//! The optimization loop and its method variants.
//!
//! Each iteration selects context, asks the optimizer model for up to K
//! variations, scores them (concurrently), records them, and, for `rattpo`,
//! asks the hint model for a one-line strategy that the next iteration
//! consumes.

use std::time::Instant;

use sha2::{Digest, Sha256};

use crate::backends::{Backends, Evaluator};
use crate::error::{BackendError, EngineError, MetapromptError};
use crate::history::History;
use crate::metaprompt::{parse_hint, parse_variations, render_hint, render_optimizer, HintQuery, OptimizerQuery};
use crate::model::{CandidateSource, Hint, Method, Prompt, RunConfig, ScoredCandidate};
use crate::rng::{stream, DetRng};
use crate::trace::{EventBody, RunMeta, TraceEvent, TraceSink, TRACE_FORMAT_VERSION};

/// Modifier phrases appended by the rule-based baseline.
pub const RULE_BASED_POOL: [&str; 15] = [
    "concept art",
    "highly detailed",
    "sharp focus",
    "artstation",
    "digital painting",
    "intricate",
    "illustration",
    "trending on artstation",
    "smooth",
    "elegant",
    "octane render",
    "fantasy",
    "wlop",
    "digital art",
    "8 k",
];

/// Phrases drawn per rule-based candidate.
pub const RULE_BASED_PICKS: usize = 3;

#[derive(Debug, Clone)]
pub struct RunResult {
    pub best: ScoredCandidate,
    pub history: History,
    pub hints: Vec<Hint>,
    pub budget_spent: u64,
    pub wall_clock_ms: u64,
    pub run_id: String,
}

/// `initial, w1, w2, w3` with three distinct pool phrases per candidate.
pub fn rule_based_candidates(initial: &Prompt, k: usize, rng: &mut DetRng) -> Vec<Prompt> {
    (0..k)
        .map(|_| {
            let words: Vec<&str> = rng
                .sample_indices(RULE_BASED_POOL.len(), RULE_BASED_PICKS)
                .into_iter()
                .map(|i| RULE_BASED_POOL[i])
                .collect();
            Prompt::new(&format!("{}, {}", initial, words.join(", "))).expect("nonempty")
        })
        .collect()
}

/// Best non-failed candidate; earliest append wins ties.
pub fn best_of(history: &History) -> Option<&ScoredCandidate> {
    history.best()
}

/// Stable run identifier derived from the config.
pub fn run_id(config: &RunConfig) -> String {
    let digest = Sha256::digest(config.to_value().to_string().as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

struct Recorder<'s> {
    run_id: String,
    sink: &'s mut dyn TraceSink,
    start: Instant,
    prompts: u64,
}

impl Recorder<'_> {
    fn emit(&mut self, body: EventBody) -> Result<(), EngineError> {
        let event = TraceEvent {
            run_id: self.run_id.clone(),
            body,
            prompts_generated_cumulative: self.prompts,
            wall_clock_ms_cumulative: self.elapsed_ms(),
        };
        self.sink.emit(&event)?;
        Ok(())
    }

    fn elapsed_ms(&self) -> u64 {
        self.start.elapsed().as_millis() as u64
    }
}

fn evaluate_one(evaluator: &dyn Evaluator, prompt: &Prompt, initial: &Prompt, seeds: &[u64]) -> Result<Vec<f64>, BackendError> {
    let scores = evaluator.evaluate(prompt, initial, seeds)?;
    if scores.len() != seeds.len() {
        return Err(BackendError::ScoreShapeMismatch {
            expected: seeds.len(),
            actual: scores.len(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(BackendError::MalformedResponse("non-finite score".into()));
    }
    Ok(scores)
}

/// Score `prompts` with at most `parallelism` concurrent evaluate calls.
/// Results come back in input order.
fn evaluate_batch(
    evaluator: &dyn Evaluator,
    prompts: &[Prompt],
    initial: &Prompt,
    seeds: &[u64],
    parallelism: usize,
) -> Vec<Result<Vec<f64>, BackendError>> {
    let mut results = Vec::with_capacity(prompts.len());
    for chunk in prompts.chunks(parallelism.max(1)) {
        if chunk.len() == 1 {
            results.push(evaluate_one(evaluator, &chunk[0], initial, seeds));
            continue;
        }
        std::thread::scope(|scope| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|p| scope.spawn(move || evaluate_one(evaluator, p, initial, seeds)))
                .collect();
            for h in handles {
                results.push(
                    h.join()
                        .unwrap_or_else(|_| Err(BackendError::TransportError("evaluator panicked".into()))),
                );
            }
        });
    }
    results
}

fn context_pairs(context: &[ScoredCandidate]) -> Vec<(Prompt, f64)> {
    context.iter().map(|c| (c.prompt.clone(), c.mean_score)).collect()
}

fn unavailable(role: &'static str) -> impl FnOnce(BackendError) -> EngineError {
    move |source| EngineError::BackendUnavailable { role, source }
}

/// Run one optimization. On a backend failure the trace written so far is
/// left in the sink and the error is returned.
pub fn run(config: &RunConfig, backends: Backends<'_>, sink: &mut dyn TraceSink) -> Result<RunResult, EngineError> {
    config.validate()?;
    let k = config.candidates_per_iteration as usize;
    let initial = &config.initial_prompt;
    let mut rec = Recorder {
        run_id: run_id(config),
        sink,
        start: Instant::now(),
        prompts: 0,
    };
    rec.emit(EventBody::RunMeta(RunMeta {
        format_version: TRACE_FORMAT_VERSION,
        config: config.to_value(),
        optimizer_model: backends.optimizer.id().to_string(),
        hint_model: backends.hint.id().to_string(),
        reward: backends.evaluator.id().to_string(),
    }))?;

    let mut history = History::new(config.rng_seed);
    let mut rule_rng = DetRng::new(config.rng_seed, stream::RULE_BASED);
    let mut extra_rng = DetRng::new(config.rng_seed, stream::EXTRA_HISTORY);

    let initial_scores =
        evaluate_one(backends.evaluator, initial, initial, &config.seeds).map_err(unavailable("evaluator"))?;
    let initial_candidate = ScoredCandidate::scored(initial.clone(), initial_scores, 0, 0, CandidateSource::Initial);
    history.append(initial_candidate.clone())?;
    rec.emit(EventBody::Candidate(initial_candidate))?;

    let mut hint: Option<String> = None;
    let mut hints = Vec::new();

    for t in 1..=config.iterations {
        let (proposals, source) = match config.method {
            Method::RuleBased => (rule_based_candidates(initial, k, &mut rule_rng), CandidateSource::RuleBased),
            method => {
                let query = optimizer_query(config, method, t, &history, &mut extra_rng, hint.as_deref());
                let response = backends
                    .optimizer
                    .complete(&render_optimizer(&query))
                    .map_err(unavailable("optimizer"))?;
                let prompts = match parse_variations(&response, k, config.max_variation_words, Some(initial)) {
                    Ok(parsed) => {
                        for v in &parsed.violations {
                            log::debug!("iteration {t}: {v:?}");
                        }
                        parsed.prompts
                    }
                    Err(e) => {
                        log::warn!("iteration {t}: {e}; no candidates this iteration");
                        Vec::new()
                    }
                };
                let source = if method == Method::Paraphrase {
                    CandidateSource::Paraphrase
                } else {
                    CandidateSource::Optimizer
                };
                (prompts, source)
            }
        };

        let scores = evaluate_batch(backends.evaluator, &proposals, initial, &config.seeds, config.parallelism());
        for (index, (prompt, result)) in proposals.into_iter().zip(scores).enumerate() {
            let candidate = match result {
                Ok(s) => ScoredCandidate::scored(prompt, s, t, index as u32, source),
                Err(e) => {
                    log::warn!("iteration {t} candidate {index}: evaluation failed: {e}");
                    ScoredCandidate::failed(prompt, t, index as u32, source)
                }
            };
            history.append(candidate.clone())?;
            rec.prompts += 1;
            rec.emit(EventBody::Candidate(candidate))?;
        }

        if config.method.generates_hints() && !config.hint_context_k.is_zero() {
            let context = history.select_hint_context(config.hint_context_k, config.hint_context_strategy);
            let query = HintQuery {
                context: context_pairs(&context),
            };
            match render_hint(&query) {
                Ok(text) => {
                    let response = backends.hint.complete(&text).map_err(unavailable("hint"))?;
                    match parse_hint(&response) {
                        Ok(parsed) => {
                            let h = Hint {
                                text: parsed.text.clone(),
                                iteration: t,
                                context_ids: context.iter().map(ScoredCandidate::key).collect(),
                            };
                            rec.emit(EventBody::Hint(h.clone()))?;
                            hints.push(h);
                            hint = Some(parsed.text);
                        }
                        Err(MetapromptError::EmptyResponse) => {
                            log::warn!("iteration {t}: empty hint response; next iteration runs without a hint");
                            hint = None;
                        }
                        Err(e) => unreachable!("parse_hint only fails with EmptyResponse, got {e}"),
                    }
                }
                Err(_) => hint = None,
            }
        }
    }

    let best = best_of(&history).cloned().expect("initial prompt is always scored");
    Ok(RunResult {
        best,
        budget_spent: rec.prompts,
        wall_clock_ms: rec.elapsed_ms(),
        run_id: rec.run_id,
        history,
        hints,
    })
}

fn optimizer_query(
    config: &RunConfig,
    method: Method,
    t: u32,
    history: &History,
    extra_rng: &mut DetRng,
    current_hint: Option<&str>,
) -> OptimizerQuery {
    let mut query = OptimizerQuery {
        initial_prompt: config.initial_prompt.clone(),
        context: Vec::new(),
        hint: None,
        num_variations: config.candidates_per_iteration as usize,
        max_words: config.max_variation_words,
    };
    if method == Method::Paraphrase {
        return query;
    }
    let mut context = history.select_optimizer_context(config.optimizer_context_k);
    if method == Method::RattpoExtraHistory {
        let extra = history.sample_excluding(extra_rng, config.hint_context_k, &context);
        context.extend(extra);
    }
    query.context = context_pairs(&context);
    query.hint = match method {
        Method::Rattpo => current_hint.map(str::to_string),
        Method::RattpoHintTransfer => config.transfer_hints.as_ref().and_then(|hints| {
            let i = (t as usize - 1).min(hints.len().saturating_sub(1));
            hints.get(i).cloned()
        }),
        _ => None,
    };
    query
}
