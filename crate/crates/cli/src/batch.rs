//! Cross product of prompts, methods and repeats, one trace file per run.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use promptsearch::model::normalize_text;
use promptsearch::trace::read_trace;
use promptsearch::{validate_config, Method, RunConfig};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{apply_overrides, read_raw};
use crate::error::CliError;
use crate::optimize::run_to_file;

pub struct BatchArgs<'a> {
    pub prompts: &'a Path,
    pub methods: &'a str,
    pub repeats: u32,
    pub out_dir: &'a Path,
    pub config: Option<&'a Path>,
    pub overrides: &'a [String],
    pub resume: bool,
    pub parallel: usize,
}

/// First 12 hex digits of the SHA-256 of the normalized prompt.
pub fn prompt_hash(prompt: &str) -> String {
    let digest = Sha256::digest(normalize_text(prompt).as_bytes());
    digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
}

pub fn trace_name(prompt: &str, method: Method, repeat: u32) -> String {
    format!("{}_{}_{repeat}.trace", prompt_hash(prompt), method.as_str())
}

pub fn read_prompts(path: &Path) -> Result<Vec<String>, CliError> {
    let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
    let prompts: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect();
    if prompts.is_empty() {
        return Err(CliError::Usage(format!("{}: no prompts", path.display())));
    }
    Ok(prompts)
}

pub fn parse_methods(list: &str) -> Result<Vec<Method>, CliError> {
    let methods: Vec<Method> = list
        .split(',')
        .map(str::trim)
        .filter(|m| !m.is_empty())
        .map(|m| m.parse::<Method>().map_err(|_| CliError::Usage(format!("unknown method `{m}`"))))
        .collect::<Result<_, _>>()?;
    if methods.is_empty() {
        return Err(CliError::Usage("no methods given".into()));
    }
    Ok(methods)
}

struct Job {
    config: RunConfig,
    path: PathBuf,
}

fn plan(args: &BatchArgs<'_>) -> Result<Vec<Job>, CliError> {
    let prompts = read_prompts(args.prompts)?;
    let methods = parse_methods(args.methods)?;
    if args.repeats == 0 {
        return Err(CliError::Usage("--repeats must be at least 1".into()));
    }
    let mut base = match args.config {
        Some(path) => read_raw(path)?,
        None => json!({}),
    };
    apply_overrides(&mut base, args.overrides)?;
    let base_seed = base.get("rng_seed").and_then(Value::as_u64).unwrap_or(0);

    let mut jobs = Vec::new();
    for prompt in &prompts {
        for &method in &methods {
            for repeat in 0..args.repeats {
                let mut raw = base.clone();
                let obj = raw
                    .as_object_mut()
                    .ok_or_else(|| promptsearch::ConfigError::Malformed("config must be a JSON object".into()))?;
                obj.insert("initial_prompt".into(), json!(prompt));
                obj.insert("method".into(), json!(method.as_str()));
                obj.insert("rng_seed".into(), json!(base_seed + u64::from(repeat)));
                jobs.push(Job {
                    config: validate_config(&raw)?,
                    path: args.out_dir.join(trace_name(prompt, method, repeat)),
                });
            }
        }
    }
    Ok(jobs)
}

fn is_complete(path: &Path) -> bool {
    read_trace(path).map(|t| t.is_complete()).unwrap_or(false)
}

pub fn cmd_batch(args: &BatchArgs<'_>) -> Result<(), CliError> {
    let jobs = plan(args)?;
    std::fs::create_dir_all(args.out_dir).map_err(CliError::io(args.out_dir))?;

    let next = AtomicUsize::new(0);
    let outcomes: Mutex<Vec<(usize, Result<bool, CliError>)>> = Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..args.parallel.clamp(1, jobs.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(job) = jobs.get(i) else { break };
                let outcome = if args.resume && is_complete(&job.path) {
                    log::info!("skip {} (complete)", job.path.display());
                    Ok(false)
                } else {
                    run_to_file(&job.config, &job.path).map(|r| {
                        log::info!("done {} best {:.4}", job.path.display(), r.best.mean_score);
                        true
                    })
                };
                outcomes.lock().unwrap().push((i, outcome));
            });
        }
    });

    let mut outcomes = outcomes.into_inner().unwrap();
    outcomes.sort_by_key(|(i, _)| *i);
    let (mut ran, mut skipped, mut failed) = (0, 0, 0);
    let mut code = 0;
    for (i, outcome) in &outcomes {
        match outcome {
            Ok(true) => ran += 1,
            Ok(false) => skipped += 1,
            Err(e) => {
                failed += 1;
                if code == 0 {
                    code = e.exit_code();
                }
                eprintln!("error: {}: {e}", jobs[*i].path.display());
            }
        }
    }
    println!("batch: {} runs, {ran} completed, {skipped} skipped, {failed} failed", jobs.len());
    if failed > 0 {
        return Err(CliError::Batch {
            failed,
            total: jobs.len(),
            code,
        });
    }
    Ok(())
}
