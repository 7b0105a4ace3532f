//! Batch runner: configuration checking, the growing-horizon solve with
//! artifact persistence, and independent re-verification of stored runs.
//!
//! Exit codes: 0 success, 1 solver/verification failure, 2 input error.

mod run;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "parcontrol",
    about = "Sparse-in-time optimal control of semilinear parabolic equations",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a config and verify the model assumptions and
    /// stabilizability constants
    Check(CommonArgs),
    /// Run the growing-horizon solve and persist all artifacts
    Solve(CommonArgs),
    /// Re-verify the artifacts of a previous solve, independently
    Verify(VerifyArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Path to the run configuration (JSON)
    #[arg(long)]
    config: PathBuf,
    /// Output directory for artifacts (defaults to the config's output.dir,
    /// then "out")
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the config's RNG seed
    #[arg(long)]
    seed: Option<u64>,
    /// Artifact kinds to emit, comma separated: csv,json,svg
    #[arg(long, value_delimiter = ',')]
    emit: Option<Vec<String>>,
    /// Suppress the human-readable summary on stdout
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct VerifyArgs {
    /// Artifact directory written by `solve`
    #[arg(long)]
    out: PathBuf,
    /// Suppress the human-readable summary on stdout
    #[arg(long)]
    quiet: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Check(args) => run::cmd_check(&args.config, args.out.as_deref(), args.quiet),
        Command::Solve(args) => run::cmd_solve(
            &args.config,
            args.out.as_deref(),
            args.seed,
            args.emit.as_deref(),
            args.quiet,
        ),
        Command::Verify(args) => run::cmd_verify(&args.out, args.quiet),
    };
    match code {
        Ok(c) => ExitCode::from(c),
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
    }
}
