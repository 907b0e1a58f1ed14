mod commands;
mod config;
mod ini;
mod manifest;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use commands::{ConfigStage, MissingArtifact};
use config::RunConfig;
use jointsynth_diffusion::DiffusionError;
use jointsynth_phantom::{PhantomError, Split};
use jointsynth_vae::VaeError;
use manifest::ManifestBuilder;

/// Joint 3D-volume / tabular synthesis pipeline: phantom cohorts, fusion-VAE
/// and latent-diffusion training, DDIM sampling, and evaluation.
#[derive(Parser)]
#[command(name = "jointsynth", version, about)]
struct Cli {
    /// INI run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Work directory (overrides config and JOINT_SYNTH_WORKDIR).
    #[arg(long, global = true)]
    workdir: Option<PathBuf>,

    /// Overrides the seed of the section driving the current command.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Suppress progress output.
    #[arg(long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate, preprocess, and split the phantom cohort.
    GenerateCohort,
    /// Train the fusion VAE on the cohort's train split.
    TrainVae,
    /// Encode latents with the trained VAE and train the diffusion model.
    TrainLdm,
    /// Sample joint volume/record pairs into a synthetic cohort directory.
    Sample {
        /// Number of pairs (defaults to [sampler] n_samples).
        #[arg(long)]
        n: Option<usize>,
    },
    /// Run the full metric battery over two cohort directories.
    Evaluate {
        /// Real cohort directory (default: <workdir>/cohorts/real).
        #[arg(long)]
        real: Option<PathBuf>,
        /// Synthetic cohort directory (default: <workdir>/samples/synthetic).
        #[arg(long)]
        synth: Option<PathBuf>,
        /// Restrict the real side to one split tag (train|test|synthetic).
        #[arg(long)]
        real_split: Option<String>,
        /// Restrict the synthetic side to one split tag.
        #[arg(long)]
        synth_split: Option<String>,
    },
    /// Render static plots from metrics, loss curves, and samples.
    Report,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(classify(&err))
        }
    }
}

fn classify(err: &anyhow::Error) -> u8 {
    // context markers live at the top of the anyhow chain
    if err.downcast_ref::<ConfigStage>().is_some() {
        return 2;
    }
    for cause in err.chain() {
        if cause.downcast_ref::<MissingArtifact>().is_some() {
            return 3;
        }
        if let Some(e) = cause.downcast_ref::<VaeError>() {
            return match e {
                VaeError::Divergence { .. } => 4,
                _ => 2,
            };
        }
        if let Some(e) = cause.downcast_ref::<DiffusionError>() {
            return match e {
                DiffusionError::Divergence { .. } => 4,
                DiffusionError::NumericDomain(_) => 4,
                _ => 2,
            };
        }
        if cause.downcast_ref::<PhantomError>().is_some() {
            return 2;
        }
        if cause.downcast_ref::<jointsynth_metrics::MetricsError>().is_some() {
            return 2;
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() {
            return 2;
        }
    }
    1
}

fn parse_split(s: Option<String>) -> Result<Option<Split>> {
    match s {
        None => Ok(None),
        Some(s) => Ok(Some(Split::parse(&s)?)),
    }
}

fn run(cli: Cli) -> Result<()> {
    let config_path = cli
        .config
        .clone()
        .unwrap_or_else(|| PathBuf::from("jointsynth.ini"));
    let mut cfg = RunConfig::load(&config_path, cli.workdir.as_deref())
        .map_err(|e| e.context(ConfigStage))?;

    let (name, seed_slot): (&str, &mut u64) = match &cli.command {
        Command::GenerateCohort => ("generate-cohort", &mut cfg.cohort.rng_seed),
        Command::TrainVae => ("train-vae", &mut cfg.vae_train.seed),
        Command::TrainLdm => ("train-ldm", &mut cfg.ldm_train.seed),
        Command::Sample { .. } => ("sample", &mut cfg.sampler_seed),
        Command::Evaluate { .. } => ("evaluate", &mut cfg.eval.seed),
        Command::Report => ("report", &mut cfg.sampler_seed),
    };
    if let Some(seed) = cli.seed {
        *seed_slot = seed;
    }

    std::fs::create_dir_all(&cfg.workdir)?;
    let manifest = ManifestBuilder::start(name, &config_path)?;
    let artifacts = match cli.command {
        Command::GenerateCohort => commands::cmd_generate_cohort(&cfg, cli.quiet)?,
        Command::TrainVae => commands::cmd_train_vae(&cfg, cli.quiet)?,
        Command::TrainLdm => commands::cmd_train_ldm(&cfg, cli.quiet)?,
        Command::Sample { n } => commands::cmd_sample(&cfg, n, cli.quiet)?,
        Command::Evaluate {
            real,
            synth,
            real_split,
            synth_split,
        } => commands::cmd_evaluate(
            &cfg,
            real,
            synth,
            parse_split(real_split)?,
            parse_split(synth_split)?,
            cli.quiet,
        )?,
        Command::Report => commands::cmd_report(&cfg, cli.quiet)?,
    };
    manifest.finish(&cfg.workdir, &artifacts)?;
    Ok(())
}
