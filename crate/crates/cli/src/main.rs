use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use setfuse::reproduce::{reproduce, Example};
use setfuse::run::{run_fuse, run_sweep, Mode};
use setfuse::scenario::Scenario;
use setfuse::CliError;

/// Fusion of finite-set distributions by exponential mixture densities.
#[derive(Debug, Parser)]
#[command(name = "setfuse", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fuse the two inputs of a scenario and write fuse.csv.
    Fuse {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_enum)]
        mode: ModeArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Sweep condition number and weight; writes sweep.csv and optimal.csv.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (defaults to one per core).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Regenerate the data of a built-in experiment.
    Reproduce {
        #[arg(value_enum)]
        example: ExampleArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    P2,
    Consistent,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ExampleArg {
    Ex1,
    Ex2,
    Ex3,
    Ex4,
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Fuse { scenario, mode, out, seed } => {
            let s = Scenario::load(&scenario)?;
            let mode = match mode {
                ModeArg::P2 => Mode::P2,
                ModeArg::Consistent => Mode::Consistent,
            };
            let row = run_fuse(&s, &base_dir(&scenario), mode, seed, &out)?;
            log::info!(
                "{} fusion: omega_card = {}, E[n] = {}, inconsistent = {}",
                mode.name(),
                row.omega_card,
                row.expected_count,
                row.inconsistent()
            );
        }
        Command::Sweep { scenario, out, seed, jobs } => {
            let s = Scenario::load(&scenario)?;
            let res = run_sweep(&s, &base_dir(&scenario), seed, jobs, &out)?;
            log::info!("{} sweep cells written to {}", res.cells.len(), out.display());
        }
        Command::Reproduce { example, out, seed } => {
            let example = match example {
                ExampleArg::Ex1 => Example::Ex1,
                ExampleArg::Ex2 => Example::Ex2,
                ExampleArg::Ex3 => Example::Ex3,
                ExampleArg::Ex4 => Example::Ex4,
            };
            for check in reproduce(example, &out, seed)? {
                if check.pass == Some(false) {
                    log::warn!("{check}");
                }
                println!("{check}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SETFUSE_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
