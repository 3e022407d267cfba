//! Command-line driver for trajfield: synthetic ground truth, oracle and
//! gradient-based fitting, benchmark evaluation, derived products and
//! gradient checks, all exchanging data through TFZ containers.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

mod commands;
pub mod config;
pub mod output;
pub mod tfz;

/// Input problems (bad flags, unreadable or malformed files).
pub const EXIT_INPUT: i32 = 1;
/// Numeric failures (optimization, alignment, rank deficiency, gradients).
pub const EXIT_NUMERIC: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] trajfield::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("format error: {0}")]
    Format(String),
    #[error("usage: {0}")]
    Usage(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }

    pub fn exit_code(&self) -> i32 {
        use trajfield::Error as E;
        match self {
            CliError::Core(
                E::Numeric(_) | E::RankDeficient(_) | E::Optimization { .. } | E::Alignment(_) | E::Metric(_) | E::Camera(_),
            )
            | CliError::Numeric(_) => EXIT_NUMERIC,
            _ => EXIT_INPUT,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "trajfield", version, about = "Trajectory-field fitting, evaluation and ground-truth synthesis")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (falls back to TRAJFIELD_THREADS, then all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ray-cast a preset scene into a ground-truth bundle.
    Synth(commands::SynthArgs),
    /// Least-squares oracle fit of a field to a ground-truth bundle.
    Fit(commands::FitArgs),
    /// Gradient-based fit minimizing the training losses.
    Optimize(commands::OptimizeArgs),
    /// Benchmark predicted fields against ground truth.
    Eval(commands::EvalArgs),
    /// Masks, flow, tracks, forecasts, fused clouds and cameras from a field.
    Derive(commands::DeriveArgs),
    /// Compare analytic loss gradients with central differences.
    Gradcheck(commands::GradcheckArgs),
    /// Print a container manifest summary.
    Info(commands::InfoArgs),
}

fn thread_count(flag: Option<usize>) -> Result<usize, CliError> {
    if let Some(n) = flag {
        return if n == 0 { Err(CliError::Usage("--threads must be >= 1".into())) } else { Ok(n) };
    }
    match std::env::var("TRAJFIELD_THREADS") {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| CliError::Usage(format!("TRAJFIELD_THREADS must be a positive integer, got `{v}`"))),
        _ => Ok(0),
    }
}

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the process exit code. Standard output carries results, standard
/// error carries logs and diagnostics.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.global.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_env("RUST_LOG").is_test(false).try_init();

    let result = thread_count(cli.global.threads).and_then(|threads| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| CliError::Usage(format!("cannot start thread pool: {e}")))?;
        pool.install(|| commands::dispatch(&cli.command, &cli.global))
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
