//! `promptsearch` command-line entry point.
//!
//! Exit codes: 0 success, 2 config or input error, 3 backend failure,
//! 4 i/o failure.

mod analyze;
mod batch;
mod config;
mod error;
mod optimize;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::analyze::Report;
use crate::batch::BatchArgs;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "promptsearch", version, about = "Test-time prompt optimization with history and hints")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one optimization and write its trace.
    Optimize {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Dotted-path override, e.g. `--set iterations=10`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Run every prompt x method x repeat combination.
    Batch {
        /// One initial prompt per line; blank lines and `#` comments are skipped.
        #[arg(long)]
        prompts: PathBuf,
        /// Comma-separated method names.
        #[arg(long)]
        methods: String,
        #[arg(long, default_value_t = 3)]
        repeats: u32,
        #[arg(long)]
        out_dir: PathBuf,
        /// Base config shared by every run (prompt, method and seed are filled in).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Skip runs whose trace is already complete.
        #[arg(long)]
        resume: bool,
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
    /// Turn traces into reports.
    Analyze {
        #[arg(long)]
        traces: String,
        #[arg(long, value_enum)]
        report: Report,
        #[arg(long)]
        out: PathBuf,
    },
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Optimize { config, out, overrides } => optimize::cmd_optimize(&config, &out, &overrides),
        Command::Batch {
            prompts,
            methods,
            repeats,
            out_dir,
            config,
            overrides,
            resume,
            parallel,
        } => batch::cmd_batch(&BatchArgs {
            prompts: &prompts,
            methods: &methods,
            repeats,
            out_dir: &out_dir,
            config: config.as_deref(),
            overrides: &overrides,
            resume,
            parallel,
        }),
        Command::Analyze { traces, report, out } => analyze::cmd_analyze(&traces, report, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
