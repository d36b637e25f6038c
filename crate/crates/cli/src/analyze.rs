//! Reports over a set of trace files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use promptsearch::metrics::{
    aggregate, best_so_far_curve, boundaries, budget_grid, curves_to_csv, curves_to_json, is_paraphrase,
    per_iteration_mean, speedup,
};
use promptsearch::trace::{read_trace, Trace};
use promptsearch::RunConfig;
use serde_json::{json, Value};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum Report {
    Curves,
    IterationMeans,
    Speedup,
    Summary,
}

struct Loaded {
    path: PathBuf,
    trace: Trace,
    config: RunConfig,
}

fn load(pattern: &str) -> Result<Vec<Loaded>, CliError> {
    let paths = glob::glob(pattern).map_err(|e| CliError::Usage(format!("bad glob `{pattern}`: {e}")))?;
    let mut paths: Vec<PathBuf> = paths.filter_map(Result::ok).filter(|p| p.is_file()).collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::NoTraces(pattern.to_string()));
    }
    paths
        .into_iter()
        .map(|path| {
            let trace = read_trace(&path).map_err(|source| CliError::Trace { path: path.clone(), source })?;
            if trace.truncated {
                log::warn!("{}: dropped a truncated final line", path.display());
            }
            let config = trace.config().map_err(|source| CliError::Trace { path: path.clone(), source })?;
            Ok(Loaded { path, trace, config })
        })
        .collect()
}

fn write(out: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(CliError::io(parent))?;
    }
    std::fs::write(out, text).map_err(CliError::io(out))
}

fn curves(traces: &[Loaded], out: &Path) -> Result<(), CliError> {
    let mut ks: Vec<u32> = traces.iter().map(|l| l.config.candidates_per_iteration).collect();
    ks.sort_unstable();
    ks.dedup();
    if ks.len() > 1 {
        return Err(CliError::MixedConfigs(ks));
    }
    let n = traces.iter().map(|l| l.config.iterations).max().unwrap_or(0);
    let grid = budget_grid(n, ks[0]);
    let mut by_method: BTreeMap<&str, Vec<_>> = BTreeMap::new();
    for l in traces {
        let curve = best_so_far_curve(&l.trace)?.resample(&grid);
        by_method.entry(l.config.method.as_str()).or_default().push(curve);
    }
    let aggregated = by_method
        .values()
        .map(|curves| aggregate(curves))
        .collect::<Result<Vec<_>, _>>()?;
    write(out, &curves_to_csv(&aggregated))?;
    write(&out.with_extension("json"), &curves_to_json(&aggregated))
}

fn iteration_means(traces: &[Loaded], out: &Path) -> Result<(), CliError> {
    let mut csv = String::from("run_id,method,rng_seed,iteration,mean\n");
    for l in traces {
        for (iteration, mean) in per_iteration_mean(&l.trace)? {
            csv.push_str(&format!(
                "{},{},{},{iteration},{mean}\n",
                l.trace.run_id,
                l.config.method.as_str(),
                l.config.rng_seed
            ));
        }
    }
    write(out, &csv)
}

/// Pairs every non-paraphrase trace with the paraphrase trace sharing its
/// initial prompt and rng seed.
fn speedups(traces: &[Loaded], out: &Path) -> Result<(), CliError> {
    let key = |l: &Loaded| (l.config.initial_prompt.to_string(), l.config.rng_seed);
    let mut paraphrase: BTreeMap<(String, u64), Vec<&Loaded>> = BTreeMap::new();
    for l in traces.iter().filter(|l| is_paraphrase(&l.trace)) {
        paraphrase.entry(key(l)).or_default().push(l);
    }
    if paraphrase.is_empty() {
        return Err(CliError::Pairing("speedup needs paraphrase traces to compare against".into()));
    }
    let mut pairs = Vec::new();
    let mut per_method: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for l in traces.iter().filter(|l| !is_paraphrase(&l.trace)) {
        let reference = match paraphrase.get(&key(l)).map(Vec::as_slice) {
            Some([one]) => *one,
            Some(many) => {
                return Err(CliError::Pairing(format!(
                    "{}: {} paraphrase traces share its prompt and seed",
                    l.path.display(),
                    many.len()
                )))
            }
            None => {
                return Err(CliError::Pairing(format!(
                    "{}: no paraphrase trace with the same prompt and seed",
                    l.path.display()
                )))
            }
        };
        let report = speedup(&l.trace, &reference.trace)?;
        if let Some(s) = report.speedup {
            per_method.entry(l.config.method.as_str()).or_default().push(s);
        }
        pairs.push(json!({
            "trace": l.path,
            "paraphrase_trace": reference.path,
            "method": l.config.method.as_str(),
            "initial_prompt": l.config.initial_prompt,
            "rng_seed": l.config.rng_seed,
            "report": report,
        }));
    }
    let mean: BTreeMap<&str, Value> = per_method
        .into_iter()
        .map(|(m, v)| (m, json!({"mean_speedup": v.iter().sum::<f64>() / v.len() as f64, "wins": v.len()})))
        .collect();
    let doc = json!({"pairs": pairs, "by_method": mean});
    write(out, &serde_json::to_string_pretty(&doc).expect("json"))
}

fn summary(traces: &[Loaded], out: &Path) -> Result<(), CliError> {
    let mut rows = Vec::new();
    for l in traces {
        let best = l
            .trace
            .candidates()
            .filter(|c| !c.is_failed())
            .fold(None, |best: Option<&promptsearch::ScoredCandidate>, c| match best {
                Some(b) if b.mean_score >= c.mean_score => Some(b),
                _ => Some(c),
            });
        let last = boundaries(&l.trace).ok().and_then(|b| b.last().copied());
        let failed = l.trace.candidates().filter(|c| c.is_failed()).count();
        rows.push(json!({
            "trace": l.path,
            "run_id": l.trace.run_id,
            "method": l.config.method.as_str(),
            "initial_prompt": l.config.initial_prompt,
            "rng_seed": l.config.rng_seed,
            "complete": l.trace.is_complete(),
            "truncated": l.trace.truncated,
            "prompts_generated": last.map_or(0, |b| b.prompts),
            "wall_clock_ms": last.map_or(0, |b| b.wall_clock_ms),
            "failed_candidates": failed,
            "hints": l.trace.hints().count(),
            "best_score": best.map(|b| b.mean_score),
            "best_prompt": best.map(|b| b.prompt.as_str()),
        }));
        println!(
            "{}\t{}\t{}",
            l.config.method.as_str(),
            best.map_or("-".to_string(), |b| format!("{:.4}", b.mean_score)),
            l.path.display()
        );
    }
    write(out, &serde_json::to_string_pretty(&rows).expect("json"))
}

pub fn cmd_analyze(pattern: &str, report: Report, out: &Path) -> Result<(), CliError> {
    let traces = load(pattern)?;
    log::info!("{} traces", traces.len());
    match report {
        Report::Curves => curves(&traces, out),
        Report::IterationMeans => iteration_means(&traces, out),
        Report::Speedup => speedups(&traces, out),
        Report::Summary => summary(&traces, out),
    }
}
