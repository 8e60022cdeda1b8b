//! Command-line front end for the turbid-media imaging pipeline.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use turbidspike::events::{read_events, write_events};
use turbidspike::pipeline::{run_evaluate, run_preprocess, run_simulate, run_train, PipelineConfig};
use turbidspike::preprocess::crop_roi;
use turbidspike::Error;

#[derive(Parser, Debug)]
#[command(name = "turbidspike", version, about = "Neuromorphic imaging through turbid media")]
struct Cli {
    /// TOML configuration file; defaults apply to anything it leaves out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration value, e.g. `--set phantom.mu_s=4.5`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Master seed for simulation and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate scattered and clear event recordings of the dataset.
    Simulate {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Segment, crop, filter and bin recordings into tensor archives.
    Preprocess {
        /// Output directory of `simulate`.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the spiking autoencoder on preprocessed tensors.
    Train {
        #[arg(long)]
        tensors: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from a checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score a checkpoint on the held-out tensors.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        tensors: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Apply the configured ROI and filter chain to one event file.
    Filter {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Inspect the configuration.
    Config {
        #[command(subcommand)]
        action: ConfigAction,
    },
}

#[derive(Subcommand, Debug)]
enum ConfigAction {
    /// Print the effective configuration as TOML.
    Dump,
    /// Validate the configuration and print its digest.
    Check,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Numeric(_) => 4,
        Error::Io(_) | Error::Format(_) | Error::InvalidInput(_) | Error::Protocol(_) | Error::Shape(_) => 3,
    }
}

fn load_config(cli: &Cli) -> turbidspike::Result<PipelineConfig> {
    let base = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    let mut cfg = base.with_overrides(&cli.overrides)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
        cfg.train.seed = s;
    }
    Ok(cfg)
}

fn out_dir(cfg: &PipelineConfig, given: &Option<PathBuf>, stage: &str) -> PathBuf {
    given.clone().unwrap_or_else(|| cfg.paths.output_dir.join(stage))
}

fn run(cli: &Cli) -> turbidspike::Result<()> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Simulate { out } => {
            let dir = out_dir(&cfg, out, "simulate");
            let m = run_simulate(&cfg, &dir)?;
            println!("{} files written to {}", m.outputs.len(), dir.display());
        }
        Command::Preprocess { input, out } => {
            let dir = out_dir(&cfg, out, "preprocess");
            run_preprocess(&cfg, input, &dir)?;
            println!("tensors written to {}", dir.display());
        }
        Command::Train { tensors, out, resume } => {
            let dir = out_dir(&cfg, out, "train");
            run_train(&cfg, tensors, &dir, resume.as_deref())?;
            println!("checkpoints written to {}", dir.display());
        }
        Command::Evaluate { checkpoint, tensors, out } => {
            let dir = out_dir(&cfg, out, "evaluate");
            let (_, report) = run_evaluate(&cfg, checkpoint, tensors, &dir)?;
            println!(
                "{} samples: SSIM input {:.4} -> reconstruction {:.4}, MSE input {:.4} -> reconstruction {:.4}",
                report.len(),
                report.mean_ssim_input,
                report.mean_ssim_recon,
                report.mean_mse_input,
                report.mean_mse_recon
            );
        }
        Command::Filter { input, output } => filter_file(&cfg, input, output)?,
        Command::Config { action: ConfigAction::Dump } => print!("{}", cfg.to_toml()?),
        Command::Config { action: ConfigAction::Check } => {
            cfg.validate()?;
            println!("ok {}", cfg.digest());
        }
    }
    Ok(())
}

fn filter_file(cfg: &PipelineConfig, input: &Path, output: &Path) -> turbidspike::Result<()> {
    let stream = read_events(input)?;
    let roi = cfg.preprocess.roi.unwrap_or_else(|| turbidspike::preprocess::RoiRect::full(stream.width(), stream.height()));
    let cropped = crop_roi(&stream, &roi)?;
    let filtered = cfg.preprocess.filters.apply_chain(&cfg.preprocess.chain, &cropped);
    log::info!("{} of {} events kept", filtered.len(), stream.len());
    write_events(&filtered, output)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
