//! `nvsense`: run simulated NV magnetometry experiments from a JSON config.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nvsense::experiments::Scheme;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Simulation(String),
    #[error("{0}")]
    Degenerate(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Simulation(_) => 2,
            CliError::Degenerate(_) => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "nvsense", version, about = "NV-ensemble vector AC magnetometry simulator")]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config (default: current directory).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for Monte Carlo (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// ODMR spectrum and fitted resonances.
    Odmr,
    /// Per-axis Rabi oscillations and orientation ratios.
    Rabi,
    /// Echo signal versus AC amplitude for one program.
    EchoSweep {
        /// Sequence file to run instead of `sweep.mode`.
        #[arg(long)]
        sequence: Option<PathBuf>,
    },
    /// Sensitivities of the conventional and multi-frequency schemes.
    Sensitivity {
        #[arg(long, default_value = "both")]
        scheme: Scheme,
    },
    /// Vector estimate of the configured AC field with both schemes.
    Vector,
    /// Sequence file tools.
    Seq {
        #[command(subcommand)]
        command: SeqCommand,
    },
}

#[derive(Debug, Subcommand)]
enum SeqCommand {
    /// Parse, validate and check a sequence file against the switch topology.
    Check {
        file: PathBuf,
        /// Accept arbitrary phases instead of multiples of pi/2.
        #[arg(long)]
        relaxed: bool,
        /// Print the canonical form.
        #[arg(long)]
        canonical: bool,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Command::Seq {
        command: SeqCommand::Check {
            file,
            relaxed,
            canonical,
        },
    } = &cli.command
    {
        return commands::seq_check(file, cli.config.as_deref(), !relaxed, *canonical);
    }

    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config <path> is required".into()))?;
    let config = config::RunConfig::load(path)?;
    let seed = cli
        .seed
        .or(config.seed)
        .ok_or_else(|| CliError::Config("a seed is required: pass --seed or set \"seed\"".into()))?;
    let out = cli
        .out
        .clone()
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out)
        .map_err(|e| CliError::Simulation(format!("cannot create {}: {e}", out.display())))?;
    let ctx = commands::Context {
        provenance: nvsense::report::Provenance {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config.hash(),
            seed,
        },
        config,
        seed,
        out,
    };

    match cli.command {
        Command::Odmr => commands::odmr(&ctx),
        Command::Rabi => commands::rabi(&ctx),
        Command::EchoSweep { sequence } => commands::echo_sweep(&ctx, sequence.as_deref()),
        Command::Sensitivity { scheme } => commands::sensitivity(&ctx, scheme),
        Command::Vector => commands::vector(&ctx),
        Command::Seq { .. } => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli.threads;
    let result = match threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| run(cli)),
            Err(e) => Err(CliError::Config(format!("cannot start {n} threads: {e}"))),
        },
        None => run(cli),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
