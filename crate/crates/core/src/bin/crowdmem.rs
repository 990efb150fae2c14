use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crowdmem::cli::{
    cmd_confidence_report, cmd_evaluate, cmd_simulate, cmd_sweep_memory, cmd_train,
    ExperimentConfig,
};

#[derive(Parser)]
#[command(
    name = "crowdmem",
    about = "Representation learning from crowdsourced binary labels with temporal-aware confidence weighting",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config file (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides every seed in the config (synth seed, train seed, seeds list).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and write its CSV files plus a manifest.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Train the encoder; write checkpoint, history, embeddings, confidences.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate against majority-vote and EM baselines over the seeds list.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Evaluate this stored encoder instead of retraining per seed.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Retrain over a grid of memory window sizes and tabulate accuracy.
    SweepMemory {
        #[command(flatten)]
        common: Common,
    },
    /// Correlate per-worker averaged confidence with per-worker expertise.
    ConfidenceReport {
        #[command(flatten)]
        common: Common,
        /// Build the confidence table with this stored encoder instead of
        /// raw features.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn load_config(common: &Common) -> crowdmem::Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.override_seed(seed);
    }
    let out_dir = common
        .out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    Ok((cfg, out_dir))
}

fn run() -> crowdmem::Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Simulate { common } => {
            let (cfg, out_dir) = load_config(common)?;
            for path in cmd_simulate(&cfg, &out_dir)? {
                println!("wrote {}", path.display());
            }
        }
        Command::Train { common } => {
            let (cfg, out_dir) = load_config(common)?;
            for path in cmd_train(&cfg, &out_dir)? {
                println!("wrote {}", path.display());
            }
        }
        Command::Evaluate { common, checkpoint } => {
            let (cfg, out_dir) = load_config(common)?;
            let path = cmd_evaluate(&cfg, checkpoint.as_deref(), &out_dir)?;
            println!("wrote {}", path.display());
        }
        Command::SweepMemory { common } => {
            let (cfg, out_dir) = load_config(common)?;
            let path = cmd_sweep_memory(&cfg, &out_dir)?;
            println!("wrote {}", path.display());
        }
        Command::ConfidenceReport { common, checkpoint } => {
            let (cfg, out_dir) = load_config(common)?;
            for path in cmd_confidence_report(&cfg, checkpoint.as_deref(), &out_dir)? {
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
