use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use infotuple_experiment::compare::compare_dirs;
use infotuple_experiment::run::{run_spec, THREADS_ENV};
use infotuple_experiment::spec::ExperimentSpec;
use infotuple_experiment::ExperimentError;

#[derive(Parser)]
#[command(
    name = "infotuple",
    version,
    about = "Active tuple-query similarity learning experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment spec (or a manifest written by a previous run).
    #[command(after_help = format!("Seeds run concurrently on ${THREADS_ENV} threads (default: CPU count)."))]
    Run {
        spec: PathBuf,
        /// Write outputs here instead of the configured output_dir.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Align run directories on normalized query count and tabulate mean ± stderr.
    Compare {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
}

fn execute(cli: Cli) -> Result<(), ExperimentError> {
    match cli.command {
        Command::Run { spec, output } => {
            let spec = ExperimentSpec::load(&spec)?;
            let outcomes = run_spec(&spec, output.as_deref())?;
            for o in outcomes {
                if let Some(last) = o.metrics.last() {
                    let tau = last.mean_tau.map_or("-".to_string(), |t| format!("{t:.4}"));
                    println!(
                        "seed {}: {} rounds, normalized count {}, mean tau {tau}",
                        o.seed, last.round, last.normalized_query_count
                    );
                }
            }
            Ok(())
        }
        Command::Compare { dirs, output } => {
            let rows = compare_dirs(&dirs, &output)?;
            println!("wrote {} rows to {}", rows.len(), output.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
