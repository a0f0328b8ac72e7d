mod commands;
mod config;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use arfm::trainer::TrainMode;
use clap::{Parser, Subcommand};

use config::{Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "arfm", version, about = "Advantage-weighted flow matching on a synthetic reaching benchmark")]
struct Cli {
    /// TOML run configuration; omitted keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for data generation, training, evaluation and validation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// arfm, vanilla_fm, rwr or fixed_alpha:<value>.
    #[arg(long, global = true)]
    mode: Option<TrainMode>,
    /// Output directory.
    #[arg(long, global = true, env = "ARFM_OUT")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the mixed-quality demonstration dataset.
    GenData,
    /// Train a policy and write its checkpoint and traces.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Run the sequential task-group protocol instead.
        #[arg(long)]
        continual: bool,
    },
    /// Roll out a checkpoint under the configured noise levels.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Sweep lambda and the bisection budget.
    Ablate {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Run the numerical oracle suite; exits nonzero on any failure.
    Validate {
        #[arg(long)]
        tolerance_scale: Option<f64>,
        #[arg(long)]
        skip_tilt: bool,
    },
    /// Draw SVG figures from the CSVs in a directory.
    Plot {
        /// Directory holding the CSVs; defaults to the output directory.
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<ExitCode> {
    let base = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let mut overrides = Overrides {
        seed: cli.seed,
        mode: cli.mode,
        out: cli.out,
        ..Overrides::default()
    };
    match &cli.command {
        Command::Train { data, .. } | Command::Ablate { data } => overrides.data = data.clone(),
        Command::Eval { checkpoint } => overrides.checkpoint = checkpoint.clone(),
        _ => {}
    }
    let mut cfg = base.resolve(overrides);

    match cli.command {
        Command::GenData => commands::gen_data(&cfg)?,
        Command::Train { continual, .. } => commands::train(&cfg, continual)?,
        Command::Eval { .. } => commands::eval(&cfg)?,
        Command::Ablate { .. } => commands::ablate(&cfg)?,
        Command::Validate {
            tolerance_scale,
            skip_tilt,
        } => {
            if let Some(scale) = tolerance_scale {
                cfg.validate.tolerance_scale = scale;
            }
            cfg.validate.skip_tilt |= skip_tilt;
            if !commands::validate(&cfg)? {
                return Ok(ExitCode::from(2));
            }
        }
        Command::Plot { input } => {
            let dir = input.unwrap_or_else(|| cfg.out_dir().to_path_buf());
            for path in plot::plot_dir(&dir)? {
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
