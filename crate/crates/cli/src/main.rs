//! `imc generate|train|eval|compare --config <file> [--out <dir>]`
//!
//! Exit codes: 0 success or converged, 2 training hit `max_iters` (the model
//! is still written), 3 training collapsed, 4 configuration or IO error.

mod commands;
mod experiment;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use imc_core::ImcError;

use commands::{TrainOutcome, DATASET_FILE, MODEL_FILE};
use experiment::ExperimentConfig;

#[derive(Parser)]
#[command(name = "imc", version, about = "Curriculum-trained mixtures of experts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the task's dataset and a manifest that regenerates it.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Train on a dataset (default `<out>/dataset.csv`).
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Evaluate a model (default `<out>/model.json`).
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// IMC against EM over the `[compare]` grid.
    Compare {
        #[command(flatten)]
        common: Common,
    },
}

const EXIT_MAX_ITERS: u8 = 2;
const EXIT_COLLAPSE: u8 = 3;
const EXIT_CONFIG: u8 = 4;

fn init_threads() {
    if let Some(n) = std::env::var("IMC_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // fails only if a pool already exists, which cannot happen this early
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

fn run(cli: Cli) -> Result<u8, ImcError> {
    match cli.command {
        Command::Generate { common } => {
            let cfg = ExperimentConfig::load(&common.config)?;
            let out = cfg.resolve_out(common.out.as_deref());
            let path = commands::cmd_generate(&cfg, &out)?;
            println!("wrote {}", path.display());
            Ok(0)
        }
        Command::Train { common, data } => {
            let cfg = ExperimentConfig::load(&common.config)?;
            let out = cfg.resolve_out(common.out.as_deref());
            let data = data.unwrap_or_else(|| out.join(DATASET_FILE));
            match commands::cmd_train(&cfg, &data, &out)? {
                TrainOutcome::Converged => {
                    println!("converged; wrote {}", out.join(MODEL_FILE).display());
                    Ok(0)
                }
                TrainOutcome::MaxIters => {
                    eprintln!("stopped at max_iters without converging; wrote {}", out.join(MODEL_FILE).display());
                    Ok(EXIT_MAX_ITERS)
                }
            }
        }
        Command::Eval { common, model } => {
            let cfg = ExperimentConfig::load(&common.config)?;
            let out = cfg.resolve_out(common.out.as_deref());
            let model = model.unwrap_or_else(|| out.join(MODEL_FILE));
            let report = commands::cmd_eval(&cfg, &model, &out)?;
            for (k, v) in &report.entries {
                println!("{k}\t{v}");
            }
            Ok(0)
        }
        Command::Compare { common } => {
            let cfg = ExperimentConfig::load(&common.config)?;
            let out = cfg.resolve_out(common.out.as_deref());
            let path = commands::cmd_compare(&cfg, &out)?;
            println!("wrote {}", path.display());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_threads();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_collapse() { EXIT_COLLAPSE } else { EXIT_CONFIG })
        }
    }
}
