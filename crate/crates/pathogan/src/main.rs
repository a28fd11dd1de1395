use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pathogan::config::OUTPUT_ROOT_ENV;
use pathogan::io::RunStatus;
use pathogan::suite::{dump_data, SuiteOutcome};
use pathogan::{cmd_compare, cmd_run, cmd_stats, ExperimentConfig, SuiteError};

#[derive(Parser)]
#[command(name = "pathogan", version, about = "Co-evolutionary GAN training experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run of one method.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        method: String,
        #[arg(long)]
        seed: u64,
    },
    /// Run every configured method over its seeds and compare them.
    Compare {
        #[arg(long)]
        config: PathBuf,
        /// Parallel runs (default: available cores minus one).
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Recompute summary and comparison matrices of an existing suite.
    Stats {
        #[arg(long)]
        dir: PathBuf,
    },
    /// Print samples of the configured mixture as CSV.
    DumpData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn report(outcome: &SuiteOutcome) {
    for w in &outcome.analysis.warnings {
        eprintln!("warning: {w}");
    }
    for (method, s) in &outcome.analysis.summary_best {
        println!("{method:<18} median {:.6}  mean {:.6}  std {:.6}", s.median, s.mean, s.std);
    }
    println!("{}", outcome.dir.display());
}

fn main_inner(cli: Cli) -> Result<(), SuiteError> {
    match cli.command {
        Command::Run { config, method, seed } => {
            let loaded = ExperimentConfig::load(&config)?;
            let dir = cmd_run(&loaded, &method, seed)?;
            println!("{}", dir.display());
        }
        Command::Compare { config, workers } => {
            let loaded = ExperimentConfig::load(&config)?;
            let progress = |e: &pathogan::io::RunEntry| match e.status {
                RunStatus::Complete => eprintln!(
                    "{} run {} seed {}: best fd {:.6} ({:.1}s)",
                    e.method,
                    e.index,
                    e.seed,
                    e.best_fd.unwrap_or(f64::NAN),
                    e.wallclock_seconds
                ),
                RunStatus::Failed => {
                    eprintln!("{} run {} seed {}: FAILED {}", e.method, e.index, e.seed, e.error.as_deref().unwrap_or(""))
                }
            };
            report(&cmd_compare(&loaded, workers, &progress)?);
        }
        Command::Stats { dir } => {
            let root = match std::env::var_os(OUTPUT_ROOT_ENV) {
                Some(v) if !v.is_empty() => PathBuf::from(v),
                _ => dir.parent().map(PathBuf::from).unwrap_or_else(|| PathBuf::from(".")),
            };
            report(&cmd_stats(&dir, &root)?);
        }
        Command::DumpData { config, n, seed } => {
            let loaded = ExperimentConfig::load(&config)?;
            let bytes = dump_data(&loaded.config, n, seed).map_err(|e| {
                SuiteError::Config(pathogan::config::ConfigError {
                    source: config.display().to_string(),
                    problems: vec![e.to_string()],
                })
            })?;
            std::io::stdout()
                .write_all(&bytes)
                .map_err(|e| SuiteError::Io(pathogan::io::IoError::io(&PathBuf::from("<stdout>"), e)))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match main_inner(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
