mod common;

use std::sync::atomic::{AtomicUsize, Ordering};

use proptest::prelude::*;

use promptsearch::backends::mock::{MockEvaluator, MockTextModel};
use promptsearch::backends::Backends;
use promptsearch::model::{ContextSize, Method, RunConfig};
use promptsearch::trace::{parse_trace, strip_wall_clock, EventBody, MemorySink};
use promptsearch::{BackendError, EngineError, Prompt};

use common::{instance, run_testbed, testbed_config};

fn small_config(initial: &str, method: Method, n: u32, k: u32) -> RunConfig {
    let mut config = RunConfig::new(Prompt::new(initial).unwrap());
    config.method = method;
    config.iterations = n;
    config.candidates_per_iteration = k;
    let budget = (n * k) as usize;
    config.optimizer_context_k = config.optimizer_context_k.min(budget);
    config.hint_context_k = ContextSize::Count(budget.min(20));
    config
}

fn run_mock(config: &RunConfig, optimizer: &MockTextModel, hint: &MockTextModel) -> (Result<promptsearch::RunResult, EngineError>, MemorySink) {
    let evaluator = MockEvaluator::by_length("len");
    let mut sink = MemorySink::default();
    let result = promptsearch::run(
        config,
        Backends {
            optimizer,
            hint,
            evaluator: &evaluator,
        },
        &mut sink,
    );
    (result, sink)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn no_hint_without_context_is_paraphrase(
        initial in "[a-z]{1,8}( [a-z]{1,8}){0,4}",
        n in 1u32..5,
        k in 1u32..6,
    ) {
        let mut calls = Vec::new();
        for method in [Method::Paraphrase, Method::RattpoNoHint] {
            let mut config = small_config(&initial, method, n, k);
            config.optimizer_context_k = 0;
            let optimizer = MockTextModel::numbered("o", k as usize);
            let hint = MockTextModel::fixed("h", "unused");
            run_mock(&config, &optimizer, &hint).0.unwrap();
            prop_assert!(hint.calls().is_empty());
            calls.push(optimizer.calls());
        }
        prop_assert_eq!(calls[0].len(), n as usize);
        prop_assert_eq!(&calls[0], &calls[1]);
    }

    #[test]
    fn budget_is_exact_and_hints_are_bounded(
        seed in 0u64..1000,
        n in 1u32..6,
        k in 1u32..6,
        m in 0usize..5,
    ) {
        let method = [Method::Rattpo, Method::RattpoNoHint, Method::RattpoExtraHistory, Method::Paraphrase, Method::RuleBased][m];
        let (initial, tb) = instance(seed);
        let mut config = testbed_config(initial, &tb, method, n, k);
        config.rng_seed = seed;
        config.optimizer_context_k = config.optimizer_context_k.min((n * k) as usize);
        config.hint_context_k = ContextSize::Count(((n * k) as usize).min(20));
        let (result, sink) = run_testbed(&config);
        prop_assert_eq!(result.budget_spent, u64::from(n * k));
        prop_assert_eq!(result.history.len() as u64, u64::from(n * k) + 1);

        let trace = parse_trace(&sink.to_jsonl()).unwrap();
        prop_assert!(trace.is_complete());
        let hints: Vec<_> = trace.hints().collect();
        prop_assert!(hints.len() <= n as usize);
        if method != Method::Rattpo {
            prop_assert!(hints.is_empty());
        }
        for h in &hints {
            prop_assert!((1..=n).contains(&h.iteration));
            prop_assert!(!h.context_ids.is_empty());
            for id in &h.context_ids {
                prop_assert!(id.iteration <= h.iteration);
                prop_assert!(result.history.contains(*id));
            }
        }
        let replayed = trace.replay_history().unwrap();
        prop_assert_eq!(replayed.entries(), result.history.entries());
    }

    #[test]
    fn same_seed_same_trace(seed in 0u64..1000, rng_seed in any::<u64>()) {
        let (initial, tb) = instance(seed);
        let mut config = testbed_config(initial, &tb, Method::Rattpo, 3, 4);
        config.rng_seed = rng_seed;
        config.hint_context_k = ContextSize::Count(5);
        let a = run_testbed(&config).1.to_jsonl();
        let b = run_testbed(&config).1.to_jsonl();
        prop_assert_eq!(strip_wall_clock(&a), strip_wall_clock(&b));
    }
}

#[test]
fn hint_from_iteration_t_reaches_query_t_plus_one() {
    let config = small_config("a cat", Method::Rattpo, 4, 2);
    let optimizer = MockTextModel::numbered("o", 2);
    let counter = AtomicUsize::new(0);
    let hint = MockTextModel::new("h", move |_| Ok(format!("Hint: use idea {}", counter.fetch_add(1, Ordering::Relaxed) + 1)));
    let (result, sink) = run_mock(&config, &optimizer, &hint);
    let result = result.unwrap();
    let queries = optimizer.calls();
    assert_eq!(queries.len(), 4);
    assert!(!queries[0].contains("(Hint:"));
    for t in 1..4 {
        assert!(queries[t].contains(&format!("(Hint: use idea {t})")), "query {}", t + 1);
    }
    // the hint from the last iteration is produced but never consumed
    assert_eq!(result.hints.len(), 4);
    let trace = parse_trace(&sink.to_jsonl()).unwrap();
    let kinds: Vec<&str> = trace
        .events
        .iter()
        .map(|e| match e.body {
            EventBody::Candidate(_) => "c",
            EventBody::Hint(_) => "h",
            EventBody::RunMeta(_) => "m",
        })
        .collect();
    assert_eq!(kinds, ["c", "c", "c", "h", "c", "c", "h", "c", "c", "h", "c", "c", "h"]);
}

#[test]
fn optimizer_outage_aborts_with_partial_trace() {
    let config = small_config("a cat", Method::Rattpo, 3, 2);
    let optimizer = MockTextModel::scripted("o", vec![Err(BackendError::TransportError("connection refused".into()))]);
    let hint = MockTextModel::fixed("h", "x");
    let (result, sink) = run_mock(&config, &optimizer, &hint);
    assert!(matches!(result, Err(EngineError::BackendUnavailable { role: "optimizer", .. })));
    let trace = parse_trace(&sink.to_jsonl()).unwrap();
    assert_eq!(trace.events.len(), 1);
    assert!(!trace.is_complete());
}

#[test]
fn evaluator_outage_on_initial_prompt_aborts() {
    let config = small_config("a cat", Method::Paraphrase, 2, 2);
    let optimizer = MockTextModel::numbered("o", 2);
    let evaluator = MockEvaluator::new("e", |_, _| Err(BackendError::Timeout));
    let mut sink = MemorySink::default();
    let result = promptsearch::run(
        &config,
        Backends {
            optimizer: &optimizer,
            hint: &optimizer,
            evaluator: &evaluator,
        },
        &mut sink,
    );
    assert!(matches!(result, Err(EngineError::BackendUnavailable { role: "evaluator", .. })));
    assert_eq!(sink.events.len(), 1);
    assert!(optimizer.calls().is_empty());
}

#[test]
fn extra_history_appends_after_top_k() {
    let mut config = small_config("a cat", Method::RattpoExtraHistory, 3, 4);
    config.optimizer_context_k = 2;
    config.hint_context_k = ContextSize::Count(3);
    let optimizer = MockTextModel::numbered("o", 4);
    let hint = MockTextModel::fixed("h", "unused");
    run_mock(&config, &optimizer, &hint).0.unwrap();
    assert!(hint.calls().is_empty());
    let history_lines = |q: &str| q.lines().filter(|l| l.contains(". Prompt: ")).count();
    let counts: Vec<usize> = optimizer.calls().iter().map(|q| history_lines(q)).collect();
    // t=1 sees only the initial prompt; t=2 sees 2 + 3 of 5 scored; t=3 sees 2 + 3
    assert_eq!(counts, [1, 5, 5]);
}
