use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thermotomo::cli::{cmd_forward, cmd_info, cmd_reconstruct, cmd_simulate, cmd_verify, load_config, ReconstructPaths};
use thermotomo::config::parse_lambda;
use thermotomo::pipeline::LambdaChoice;
use thermotomo::verify::Tier;

#[derive(Parser)]
#[command(name = "thermotomo", version, about = "Diffusivity reconstruction from boundary temperatures")]
struct Cli {
    /// Run configuration (TOML); built-in 2D defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the parametric surrogate and write the container.
    Forward {
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Generate noisy measurements for a target diffusivity.
    Simulate {
        /// smooth-2d, piecewise-2d, smooth-3d or an expression in x1, x2, x3.
        #[arg(long)]
        target: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Recover the diffusivity from a container and a measurement file.
    Reconstruct {
        #[arg(long)]
        surrogate: Option<PathBuf>,
        #[arg(long)]
        measurements: Option<PathBuf>,
        /// A non-negative number or `morozov`.
        #[arg(long, value_parser = parse_lambda)]
        lambda: Option<LambdaChoice>,
        /// Report path; the grid is written next to it.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run the acceptance checks.
    Verify {
        #[arg(long, value_enum, default_value = "quick")]
        tier: Tier,
        /// Run a single criterion (1-11).
        #[arg(long)]
        criterion: Option<u8>,
    },
    /// Describe a container, or the problem sizes of the config.
    Info {
        #[arg(long)]
        surrogate: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut out = std::io::stdout().lock();
    let result = load_config(cli.config.as_deref()).and_then(|config| match cli.command {
        Command::Forward { output } => cmd_forward(&config, output.as_deref(), &mut out).map(|_| true),
        Command::Simulate { target, seed, output } => {
            cmd_simulate(&config, target.as_deref(), seed, output.as_deref(), &mut out).map(|_| true)
        }
        Command::Reconstruct {
            surrogate,
            measurements,
            lambda,
            output,
        } => {
            let paths = ReconstructPaths {
                surrogate,
                measurements,
                output,
            };
            cmd_reconstruct(&config, &paths, lambda, &mut out).map(|_| true)
        }
        Command::Verify { tier, criterion } => cmd_verify(tier, criterion, &mut out),
        Command::Info { surrogate } => cmd_info(&config, surrogate.as_deref(), &mut out).map(|_| true),
    });
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
