use std::path::Path;

use promptsearch::trace::FileSink;
use promptsearch::{RunConfig, RunResult};

use crate::config::{self, OwnedBackends};
use crate::error::CliError;

/// Run one config to completion, streaming its trace to `out`.
pub fn run_to_file(config: &RunConfig, out: &Path) -> Result<RunResult, CliError> {
    let backends = OwnedBackends::build(config);
    let mut sink = FileSink::create(out).map_err(|source| CliError::Trace {
        path: out.to_path_buf(),
        source,
    })?;
    Ok(promptsearch::run(config, backends.borrow(), &mut sink)?)
}

pub fn cmd_optimize(config_path: &Path, out: &Path, overrides: &[String]) -> Result<(), CliError> {
    let config = config::load(config_path, overrides)?;
    log::info!(
        "method {} with budget {} ({} x {})",
        config.method.as_str(),
        config.budget(),
        config.iterations,
        config.candidates_per_iteration
    );
    let result = run_to_file(&config, out)?;
    println!("best_score\t{:.6}", result.best.mean_score);
    println!("best_prompt\t{}", result.best.prompt);
    println!("budget_spent\t{}", result.budget_spent);
    println!("trace\t{}", out.display());
    Ok(())
}
