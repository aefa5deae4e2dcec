use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "immse", version, about = "Two-user MAC I-MMSE experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the sweep described by a config file and write its CSV.
    Run {
        config: PathBuf,
        /// Worker threads; the output does not depend on this.
        #[arg(long, default_value_t = default_workers())]
        workers: usize,
        /// Override the config's output path.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run the I-MMSE, gradient and score self-checks.
    Check {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = immse_cli::sweep::DEFAULT_SAMPLES)]
        samples: usize,
    },
    /// Print the tool version.
    Version,
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main() -> anyhow::Result<ExitCode> {
    match Cli::parse().command {
        Command::Run { config, workers, output } => {
            let mut spec = immse_cli::load(&config)?;
            if let Some(o) = output {
                spec.output = o;
            }
            let summary = immse_cli::run(&spec, workers)?;
            println!(
                "{}: {} rows x {} columns -> {} (max std error {:.3e})",
                summary.experiment,
                summary.rows,
                summary.columns.len(),
                spec.output.display(),
                summary.max_std_error
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Check { seed, samples } => {
            let lines = immse_cli::check::run_all(seed, samples)?;
            for l in &lines {
                println!("{l}");
            }
            Ok(if lines.iter().all(|l| l.passed) { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Version => {
            println!("immse {}", immse_cli::VERSION);
            Ok(ExitCode::SUCCESS)
        }
    }
}
