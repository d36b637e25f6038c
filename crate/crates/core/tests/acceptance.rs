//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

mod common;

use std::cell::Cell;
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};

use promptsearch::backends::mock::MockTextModel;
use promptsearch::backends::{Backends, Evaluator, RetryPolicy};
use promptsearch::engine::{RULE_BASED_POOL, RULE_BASED_PICKS};
use promptsearch::metaprompt::{render_optimizer, OptimizerQuery};
use promptsearch::metrics::{best_so_far_curve, speedup};
use promptsearch::model::{CandidateSource, ContextSize, Method, RunConfig};
use promptsearch::rng::{stream, DetRng};
use promptsearch::testbed::{unit_noise, TestbedConfig};
use promptsearch::trace::{parse_trace, read_trace, strip_wall_clock, FileSink, MemorySink};
use promptsearch::{rule_based_candidates, BackendError, Prompt};

use common::{final_best, fixture_trace, instance, run_testbed, testbed_config};

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn budget_arithmetic() -> Outcome {
    let start = Instant::now();
    let (initial, tb) = instance(0);
    let defaults = RunConfig::new(initial.clone());
    let mut config = testbed_config(initial, &tb, Method::Rattpo, defaults.iterations, defaults.candidates_per_iteration);
    config.rng_seed = 11;
    let (result, _) = run_testbed(&config);
    let recorded = result.history.entries().iter().filter(|c| c.iteration > 0).count();
    let elapsed = start.elapsed();
    check(
        defaults.budget() == 160 && recorded == 160 && result.budget_spent == 160 && elapsed < Duration::from_secs(60),
        format!("default budget={} recorded={recorded} elapsed={elapsed:.2?}", defaults.budget()),
    )
}

fn meta_prompt_goldens() -> Outcome {
    let strip = |s: &'static str| s.strip_suffix('\n').unwrap_or(s);
    let paraphrase = render_optimizer(&OptimizerQuery::paraphrase(Prompt::new("playing guitar").unwrap()));
    let para_ok = paraphrase == strip(include_str!("../templates/paraphrase.golden.txt"));

    let mut q = OptimizerQuery::paraphrase(Prompt::new("a lighthouse at dusk").unwrap());
    q.context = (1..=8)
        .map(|i| (Prompt::new(&format!("a lighthouse at dusk, variant {i}")).unwrap(), f64::from(i) / 10.0))
        .collect();
    q.hint = Some("Add lighting and lens details.".into());
    let full = render_optimizer(&q);
    let full_ok = full == strip(include_str!("../templates/optimizer_eight_entries.golden.txt"));
    let numbered = (1..=8)
        .filter(|i| full.lines().any(|l| l.starts_with(&format!("{i}. Prompt: "))))
        .count();
    let hint_ok = full.contains("(Hint: Add lighting and lens details.)");
    check(
        para_ok && full_ok && numbered == 8 && hint_ok,
        format!("paraphrase={para_ok} eight_entry={full_ok} history_lines={numbered} hint={hint_ok}"),
    )
}

/// Paraphrase run ending at `total_s`; optimized run first matching its peak
/// at the end of an iteration finishing at `win_s`.
fn speedup_fixture(total_s: u64, win_s: u64) -> Option<f64> {
    let para = fixture_trace(
        &[vec![0.1], vec![0.2, 0.3], vec![0.5, 0.4]],
        &[0, total_s * 500, total_s * 1000],
        Method::Paraphrase,
    );
    let opt = fixture_trace(
        &[vec![0.1], vec![0.3, 0.2], vec![0.6, 0.1], vec![0.7, 0.2]],
        &[0, win_s * 400, win_s * 1000, win_s * 1500],
        Method::Rattpo,
    );
    speedup(&opt, &para).ok()?.speedup
}

fn speedup_formula() -> Outcome {
    const TABLE: [(u64, u64, f64); 8] = [
        (447, 69, 6.46),
        (383, 106, 3.62),
        (410, 62, 6.66),
        (355, 82, 4.34),
        (1151, 300, 3.84),
        (300, 51, 5.90),
        (328, 94, 3.48),
        (310, 74, 4.20),
    ];
    let headline = speedup_fixture(447, 69).unwrap_or(f64::NAN);
    let mut worst: f64 = 0.0;
    for (total, win, reported) in TABLE {
        let got = speedup_fixture(total, win).unwrap_or(f64::NAN);
        worst = worst.max((got - reported).abs());
    }
    check(
        (headline - 6.478).abs() <= 0.001 && worst <= 0.05,
        format!("447s/69s={headline:.4} max_table_deviation={worst:.4}"),
    )
}

fn hint_efficacy() -> Outcome {
    let start = Instant::now();
    let (mut sum_r, mut sum_nh, mut wins) = (0.0, 0.0, 0);
    for seed in 0..50 {
        let r = final_best(seed, Method::Rattpo, 20);
        let nh = final_best(seed, Method::RattpoNoHint, 20);
        let eh = final_best(seed, Method::RattpoExtraHistory, 20);
        sum_r += r;
        sum_nh += nh;
        wins += usize::from(r > nh && r > eh);
    }
    let elapsed = start.elapsed();
    check(
        sum_r > sum_nh && wins * 100 >= 80 * 50 && elapsed < Duration::from_secs(300),
        format!(
            "mean rattpo={:.4} no_hint={:.4} beats_both={wins}/50 elapsed={elapsed:.2?}",
            sum_r / 50.0,
            sum_nh / 50.0
        ),
    )
}

fn hint_context_ablation() -> Outcome {
    let (mut k20, mut k0) = (0.0, 0.0);
    for seed in 0..50 {
        k20 += final_best(seed, Method::Rattpo, 20);
        k0 += final_best(seed, Method::Rattpo, 0);
    }
    check(k20 > k0, format!("mean k=20 {:.4} vs k=0 {:.4}", k20 / 50.0, k0 / 50.0))
}

/// Exhaustive maximum of the keyword reward over every subset of the
/// vocabulary appended to the initial prompt. A subset's reward depends only
/// on which keywords it contains and on its total word count, so every
/// keyword subset is paired with every word total reachable by the remaining
/// phrases. Returns (score, one maximizing subset).
fn brute_force_optimum(initial: &Prompt, tb: &TestbedConfig) -> (f64, Vec<usize>) {
    let words = |i: usize| tb.vocabulary[i].split_whitespace().count();
    let (keys, others): (Vec<usize>, Vec<usize>) =
        (0..tb.vocabulary.len()).partition(|&i| tb.keyword_weights.contains_key(&tb.vocabulary[i]));
    // reachable extra word totals, each with one witness subset
    let mut extras: BTreeMap<usize, Vec<usize>> = BTreeMap::from([(0, Vec::new())]);
    for &i in &others {
        let step: Vec<(usize, Vec<usize>)> = extras
            .iter()
            .map(|(total, set)| (total + words(i), set.iter().copied().chain([i]).collect()))
            .collect();
        for (total, set) in step {
            extras.entry(total).or_insert(set);
        }
    }
    let base = initial.as_str().split_whitespace().count();
    let mut best = (f64::NEG_INFINITY, Vec::new());
    for mask in 0u32..1 << keys.len() {
        let chosen: Vec<usize> = (0..keys.len()).filter(|j| mask >> j & 1 == 1).map(|j| keys[j]).collect();
        let weight: f64 = chosen.iter().map(|&i| tb.keyword_weights[&tb.vocabulary[i]]).sum();
        let key_words: usize = chosen.iter().map(|&i| words(i)).sum();
        for (extra, witness) in &extras {
            let total = base + key_words + extra;
            let score = weight - tb.length_penalty * total.saturating_sub(tb.soft_cap) as f64;
            if score > best.0 {
                let mut subset: Vec<usize> = chosen.iter().chain(witness).copied().collect();
                subset.sort_unstable();
                best = (score, subset);
            }
        }
    }
    best
}

fn optimum_reachability() -> Outcome {
    let mut reached = 0;
    let mut consistent = true;
    let mut max_keywords = 0;
    for seed in 0..50 {
        let (initial, tb) = instance(seed);
        max_keywords = max_keywords.max(tb.keyword_weights.len());
        let (optimum, subset) = brute_force_optimum(&initial, &tb);
        let text = subset.iter().fold(initial.to_string(), |acc, &i| format!("{acc}, {}", tb.vocabulary[i]));
        consistent &= (tb.reward().score(&Prompt::new(&text).unwrap(), 0) - optimum).abs() < 1e-9;

        let mut config = testbed_config(initial, &tb, Method::Rattpo, 10, 4);
        config.rng_seed = seed;
        let (result, _) = run_testbed(&config);
        if result.budget_spent <= 40 && result.best.mean_score >= optimum - 1e-9 {
            reached += 1;
        }
    }
    check(
        reached == 50 && consistent && max_keywords <= 6,
        format!("reached={reached}/50 within 40 prompts, oracle_consistent={consistent}, max_keywords={max_keywords}"),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (initial, tb) = instance(3);
    let mut config = testbed_config(initial, &tb, Method::Rattpo, 10, 4);
    config.rng_seed = 77;
    let mut texts = Vec::new();
    for name in ["a.trace", "b.trace"] {
        let path = dir.path().join(name);
        let model = tb.text_model();
        let evaluator = tb.evaluator();
        let mut sink = FileSink::create(&path).map_err(|e| e.to_string())?;
        promptsearch::run(
            &config,
            Backends {
                optimizer: &model,
                hint: &model,
                evaluator: &evaluator,
            },
            &mut sink,
        )
        .map_err(|e| e.to_string())?;
        drop(sink);
        read_trace(&path).map_err(|e| e.to_string())?;
        texts.push(std::fs::read_to_string(&path).map_err(|e| e.to_string())?);
    }
    let lines = texts[0].lines().count();
    check(
        strip_wall_clock(&texts[0]) == strip_wall_clock(&texts[1]) && lines > 40,
        format!("{lines} lines identical after clearing wall-clock fields"),
    )
}

/// Evaluator with transient failures (retried internally, never visible to
/// the engine) and permanent failures (surfaced as failed candidates).
struct FlakyEvaluator {
    case: u64,
    transient: f64,
    permanent: f64,
    protected: String,
    policy: RetryPolicy,
    calls: AtomicU64,
    attempts: AtomicU64,
}

impl Evaluator for FlakyEvaluator {
    fn evaluate(&self, prompt: &Prompt, _initial: &Prompt, seeds: &[u64]) -> Result<Vec<f64>, BackendError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let text = prompt.as_str();
        let attempt = Cell::new(0u64);
        let (result, n) = self.policy.run(|| {
            attempt.set(attempt.get() + 1);
            if text != self.protected && unit_noise(self.case ^ (attempt.get() << 40), text) < self.transient {
                return Err(BackendError::Timeout);
            }
            if text != self.protected && unit_noise(self.case.wrapping_add(1), text) < self.permanent {
                return Err(BackendError::BadStatus(400));
            }
            Ok(seeds.iter().map(|&s| unit_noise(self.case.wrapping_mul(31).wrapping_add(s), text)).collect())
        });
        self.attempts.fetch_add(u64::from(n), Ordering::Relaxed);
        result
    }

    fn id(&self) -> &str {
        "flaky"
    }
}

const FUZZ_METHODS: [Method; 5] = [
    Method::Rattpo,
    Method::RattpoNoHint,
    Method::RattpoExtraHistory,
    Method::Paraphrase,
    Method::RuleBased,
];

fn monotonicity_and_accounting() -> Outcome {
    let retries = Cell::new(0u64);
    let failed = Cell::new(0u64);
    let cases = Cell::new(0u64);
    let strategy = (
        1u32..5,
        1u32..6,
        0usize..3,
        0.0f64..0.6,
        0.0f64..0.4,
        0usize..FUZZ_METHODS.len(),
        any::<u64>(),
        1usize..4,
    );
    let mut runner = TestRunner::new(Config {
        cases: 1000,
        failure_persistence: None,
        ..Config::default()
    });
    let outcome = runner.run(&strategy, |(n, k, short, transient, permanent, m, case, par)| {
        cases.set(cases.get() + 1);
        let method = FUZZ_METHODS[m];
        let initial = Prompt::new("a quiet harbor").unwrap();
        let mut config = RunConfig::new(initial.clone());
        config.method = method;
        config.iterations = n;
        config.candidates_per_iteration = k;
        config.rng_seed = case;
        config.parallelism = Some(par);
        let budget = (n * k) as usize;
        config.optimizer_context_k = config.optimizer_context_k.min(budget);
        config.hint_context_k = ContextSize::Count(budget.min(20));
        let produced = (k as usize).saturating_sub(short).max(1);
        let optimizer = MockTextModel::numbered("mock", produced);
        let hint = MockTextModel::fixed("mock-hint", "Hint: add more detail");
        let evaluator = FlakyEvaluator {
            case,
            transient,
            permanent,
            protected: initial.to_string(),
            policy: RetryPolicy {
                max_attempts: 3,
                backoff_ms: 0,
                timeout_ms: 1000,
            },
            calls: AtomicU64::new(0),
            attempts: AtomicU64::new(0),
        };
        let mut sink = MemorySink::default();
        let result = promptsearch::run(
            &config,
            Backends {
                optimizer: &optimizer,
                hint: &hint,
                evaluator: &evaluator,
            },
            &mut sink,
        )
        .map_err(|e| TestCaseError::fail(e.to_string()))?;
        let trace = parse_trace(&sink.to_jsonl()).map_err(|e| TestCaseError::fail(e.to_string()))?;

        let per_iteration = if method == Method::RuleBased { k as usize } else { produced };
        let expected = (n as usize * per_iteration) as u64;
        let calls = evaluator.calls.load(Ordering::Relaxed);
        let attempts = evaluator.attempts.load(Ordering::Relaxed);
        retries.set(retries.get() + attempts - calls);
        prop_assert_eq!(calls, expected + 1);
        prop_assert_eq!(result.budget_spent, expected);

        let counters: Vec<u64> = trace
            .events
            .iter()
            .filter(|e| e.candidate().is_some())
            .map(|e| e.prompts_generated_cumulative)
            .collect();
        prop_assert_eq!(counters.first().copied(), Some(0));
        for w in counters.windows(2) {
            prop_assert_eq!(w[1], w[0] + 1);
        }
        prop_assert_eq!(counters.last().copied(), Some(expected));

        let curve = best_so_far_curve(&trace).map_err(|e| TestCaseError::fail(e.to_string()))?;
        for w in curve.points.windows(2) {
            prop_assert!(w[0].0 < w[1].0);
            prop_assert!(w[0].1 <= w[1].1);
        }

        let candidates: Vec<_> = trace.candidates().collect();
        failed.set(failed.get() + candidates.iter().filter(|c| c.is_failed()).count() as u64);
        let max_scored = candidates
            .iter()
            .filter_map(|c| c.score())
            .fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(!result.best.is_failed());
        prop_assert_eq!(result.best.mean_score, max_scored);
        prop_assert_eq!(curve.final_best(), Some(max_scored));
        if candidates.iter().all(|c| c.iteration == 0 || c.is_failed()) {
            prop_assert_eq!(result.best.source, CandidateSource::Initial);
        }
        Ok(())
    });
    let detail = format!(
        "{} fuzzed traces, {} retries absorbed, {} failed candidates excluded",
        cases.get(),
        retries.get(),
        failed.get()
    );
    match outcome {
        Ok(()) if cases.get() >= 1000 && retries.get() > 0 && failed.get() > 0 => Ok(detail),
        Ok(()) => Err(detail),
        Err(e) => Err(format!("{detail}: {e}")),
    }
}

fn rule_based_contract() -> Outcome {
    let initial = Prompt::new("a portrait of an old sailor").unwrap();
    let prefix = format!("{initial}, ");
    let pool: HashSet<&str> = RULE_BASED_POOL.iter().copied().collect();
    let mut rng = DetRng::new(0, stream::RULE_BASED);
    let mut triples: HashSet<BTreeSet<&str>> = HashSet::new();
    let mut draws = 0;
    let mut bad = 0;
    while draws < 10_000 {
        for candidate in rule_based_candidates(&initial, 8, &mut rng) {
            draws += 1;
            let Some(suffix) = candidate.as_str().strip_prefix(&prefix) else {
                bad += 1;
                continue;
            };
            let picked: Vec<&str> = suffix.split(", ").collect();
            let distinct: BTreeSet<&str> = picked.iter().copied().collect();
            if picked.len() != RULE_BASED_PICKS || distinct.len() != RULE_BASED_PICKS || !picked.iter().all(|p| pool.contains(p)) {
                bad += 1;
                continue;
            }
            triples.insert(distinct.into_iter().map(|p| *pool.get(p).unwrap()).collect());
        }
    }
    check(
        bad == 0 && pool.len() == 15,
        format!("{draws} draws, {bad} violations, {} of 455 phrase triples seen", triples.len()),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("budget_arithmetic", budget_arithmetic),
        ("meta_prompt_goldens", meta_prompt_goldens),
        ("speedup_formula", speedup_formula),
        ("hint_efficacy", hint_efficacy),
        ("hint_context_ablation", hint_context_ablation),
        ("optimum_reachability", optimum_reachability),
        ("determinism", determinism),
        ("monotonicity_and_accounting", monotonicity_and_accounting),
        ("rule_based_contract", rule_based_contract),
    ];
    let mut failures = 0;
    for (name, criterion) in criteria {
        match criterion() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failures += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failures} failed", criteria.len() - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
