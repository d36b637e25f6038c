#![allow(dead_code)]

use promptsearch::backends::Backends;
use promptsearch::model::{BackendsConfig, CandidateSource, ContextSize, Method, RunConfig};
use promptsearch::testbed::{random_instance, Behavior, InstanceSpec, TestbedConfig};
use promptsearch::trace::{EventBody, MemorySink, RunMeta, Trace, TraceEvent};
use promptsearch::{Prompt, RunResult, ScoredCandidate};

/// Trace from per-iteration score lists. `ms[t]` is the clock at the end of
/// iteration t; index 0 holds the initial prompt.
pub fn fixture_trace(iterations: &[Vec<f64>], ms: &[u64], method: Method) -> Trace {
    let mut config = RunConfig::new(Prompt::new("fixture prompt").unwrap());
    config.iterations = (iterations.len() - 1) as u32;
    config.candidates_per_iteration = iterations.iter().skip(1).map(Vec::len).max().unwrap_or(1).max(1) as u32;
    config.optimizer_context_k = 0;
    config.hint_context_k = ContextSize::Count(0);
    config.method = method;
    let mut events = Vec::new();
    let mut n = 0;
    for (t, scores) in iterations.iter().enumerate() {
        for (i, s) in scores.iter().enumerate() {
            if t > 0 {
                n += 1;
            }
            let source = if t == 0 { CandidateSource::Initial } else { CandidateSource::Optimizer };
            events.push(TraceEvent {
                run_id: "fixture".into(),
                body: EventBody::Candidate(ScoredCandidate::scored(
                    Prompt::new(&format!("p{t} {i}")).unwrap(),
                    vec![*s],
                    t as u32,
                    i as u32,
                    source,
                )),
                prompts_generated_cumulative: n,
                wall_clock_ms_cumulative: ms[t],
            });
        }
    }
    Trace {
        run_id: "fixture".into(),
        meta: RunMeta {
            format_version: 1,
            config: config.to_value(),
            optimizer_model: "o".into(),
            hint_model: "h".into(),
            reward: "r".into(),
        },
        events,
        truncated: false,
    }
}

pub fn instance(seed: u64) -> (Prompt, TestbedConfig) {
    random_instance(seed, InstanceSpec::default(), Behavior::HintFollowing)
}

pub fn testbed_config(initial: Prompt, testbed: &TestbedConfig, method: Method, iterations: u32, candidates: u32) -> RunConfig {
    let mut config = RunConfig::new(initial);
    config.method = method;
    config.iterations = iterations;
    config.candidates_per_iteration = candidates;
    config.backends = BackendsConfig::Testbed(testbed.clone());
    config
}

pub fn run_testbed(config: &RunConfig) -> (RunResult, MemorySink) {
    let BackendsConfig::Testbed(tb) = &config.backends else {
        panic!("testbed config expected");
    };
    let model = tb.text_model();
    let evaluator = tb.evaluator();
    let mut sink = MemorySink::default();
    let result = promptsearch::run(
        config,
        Backends {
            optimizer: &model,
            hint: &model,
            evaluator: &evaluator,
        },
        &mut sink,
    )
    .expect("testbed run");
    (result, sink)
}

/// Final best of one 10x4 testbed run on instance `seed`.
pub fn final_best(seed: u64, method: Method, hint_context_k: usize) -> f64 {
    let (initial, tb) = instance(seed);
    let mut config = testbed_config(initial, &tb, method, 10, 4);
    config.hint_context_k = ContextSize::Count(hint_context_k);
    config.rng_seed = seed;
    run_testbed(&config).0.best.mean_score
}

