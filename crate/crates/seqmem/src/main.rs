use clap::{Args, Parser, Subcommand};
use seqmem::cli::config::ExperimentConfig;
use seqmem::cli::{self, CliError};
use std::path::PathBuf;
use std::process::ExitCode;

/// Closed-form linear autoencoders for sequences, recurrent-network
/// initialization, and short-term-memory experiments.
#[derive(Parser)]
#[command(name = "seqmem", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a linear autoencoder in closed form; writes laes.ckpt and a fit report
    FitLaes(Common),
    /// Train a model per the config; writes model.ckpt and history.csv
    Train(Common),
    /// Write the gradient-norm-through-time curve of a trained network
    ProbeGrad(Common),
    /// Write lag-reconstruction MSEs of a checkpoint's states
    ProbeReco(Common),
    /// Reconstruct one test image from a checkpoint; writes PGM files
    Reconstruct(Common),
    /// Report a checkpoint's test accuracy
    Eval(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config file (flat `key = value` lines)
    #[arg(long)]
    config: PathBuf,
    /// Checkpoint to initialize from or operate on
    #[arg(long)]
    init_from: Option<PathBuf>,
    /// Override the config's output_dir
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the config's seed
    #[arg(long)]
    seed: Option<u64>,
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::FitLaes(c)
            | Command::Train(c)
            | Command::ProbeGrad(c)
            | Command::ProbeReco(c)
            | Command::Reconstruct(c)
            | Command::Eval(c) => c,
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let args = cli.command.common();
    let mut cfg = ExperimentConfig::from_file(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.override_seed(seed);
    }
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    let checkpoint = || {
        args.init_from.as_deref().ok_or_else(|| {
            CliError::Usage("--init-from <checkpoint> is required for this command".into())
        })
    };
    match &cli.command {
        Command::FitLaes(_) => cli::cmd_fit_laes(&cfg),
        Command::Train(_) => cli::cmd_train(&cfg, args.init_from.as_deref()),
        Command::ProbeGrad(_) => cli::cmd_probe_grad(&cfg, checkpoint()?),
        Command::ProbeReco(_) => cli::cmd_probe_reco(&cfg, checkpoint()?),
        Command::Reconstruct(_) => cli::cmd_reconstruct(&cfg, checkpoint()?),
        Command::Eval(_) => cli::cmd_eval(&cfg, checkpoint()?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
