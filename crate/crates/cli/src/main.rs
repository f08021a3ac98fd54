//! `misivqr`: simulate, identify, infer and run coverage experiments from
//! the command line. Exit codes: 0 success, 2 usage or configuration error,
//! 3 numerical failure.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::Flags;

#[derive(Parser, Debug)]
#[command(name = "misivqr", version, about = "IV quantile regression with a misclassified binary treatment")]
struct Cli {
    /// JSON file of options mirroring the flags; flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a dataset and write it as `y,d,z` CSV.
    Simulate(Flags),
    /// Structural QTE, reduced-form QTE and identified set of a model.
    Population(Flags),
    /// Identified set on a (y0, y1) grid.
    Identify(Flags),
    /// Confidence set for the structural QTE from a dataset.
    Infer(Flags),
    /// Coverage curve of the confidence set for a benchmark design.
    Coverage(Flags),
    /// Observationally equivalent perturbation of a model.
    Perturb(Flags),
    /// Rerun the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Args, Debug)]
struct ReplayArgs {
    manifest_file: PathBuf,
    #[command(flatten)]
    outputs: Flags,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
    Core(misivqr::Error),
}

impl From<misivqr::Error> for CliError {
    fn from(e: misivqr::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(misivqr::Error::Estimation(_)) => 3,
            _ => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Io(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

fn read_config(path: &Option<PathBuf>) -> Result<Option<serde_json::Value>, CliError> {
    let Some(path) = path else { return Ok(None) };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
}

fn init_threads(flags: &Flags) -> Result<(), CliError> {
    let requested = match flags.threads {
        Some(k) => Some(k),
        None => match std::env::var("MISIVQR_THREADS") {
            Ok(v) => Some(
                v.trim()
                    .parse::<usize>()
                    .map_err(|_| CliError::Usage(format!("MISIVQR_THREADS must be a positive integer, got {v:?}")))?,
            ),
            Err(_) => None,
        },
    };
    if let Some(k) = requested {
        if k == 0 {
            return Err(CliError::Usage("thread count must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = read_config(&cli.config)?;
    let (name, flags) = match &cli.command {
        Command::Replay(args) => {
            let recorded = manifest::RunManifest::read(&args.manifest_file)?;
            let flags = recorded.replay_flags(&args.outputs)?;
            (recorded.command, flags)
        }
        Command::Simulate(f) => ("simulate".to_string(), config::merge(file, f)?),
        Command::Population(f) => ("population".to_string(), config::merge(file, f)?),
        Command::Identify(f) => ("identify".to_string(), config::merge(file, f)?),
        Command::Infer(f) => ("infer".to_string(), config::merge(file, f)?),
        Command::Coverage(f) => ("coverage".to_string(), config::merge(file, f)?),
        Command::Perturb(f) => ("perturb".to_string(), config::merge(file, f)?),
    };
    flags.check_allowed(&name)?;
    init_threads(&flags)?;
    commands::dispatch(&name, &flags.resolved(&name))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
