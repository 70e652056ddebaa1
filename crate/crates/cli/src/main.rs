use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cine_core::homology::Manifold;
use cine_core::slicing::Perspective;
use cine_lab::commands::{
    cmd_generate, cmd_homology, cmd_limited_data, cmd_reconstruct, cmd_rotation_experiment, cmd_train, Source, DEFAULT_ANGLES,
};
use cine_lab::{ExperimentConfig, LabError, Overrides, Profile};
use cine_train::Target;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cinelab", version, about = "Synthetic radial cine MRI artefact-removal experiments")]
struct Cli {
    /// Flat `key = value` experiment file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    profile: Option<Profile>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Every output of the command lands below this directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate phantoms, k-space and gridding reconstructions.
    Generate,
    /// Train a network on a generated dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        domain: Option<Perspective>,
        #[arg(long)]
        target: Option<Target>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop after this step of the schedule (resume later with --resume).
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Remove artefacts with a trained network and score the result.
    Reconstruct {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Reconstruct the test phantoms of this dataset.
        #[arg(long, conflicts_with = "volume", required_unless_present = "volume")]
        data: Option<PathBuf>,
        #[arg(long)]
        volume: Option<PathBuf>,
        #[arg(long, requires = "volume")]
        truth: Option<PathBuf>,
    },
    /// β0 curves of patch clouds from the training volumes.
    Homology {
        #[arg(long)]
        data: PathBuf,
        /// Manifold tags (xy_img, xy_res, xtyt_img, xtyt_res); all by default.
        #[arg(long, value_delimiter = ',', value_parser = parse_manifold)]
        manifolds: Vec<Manifold>,
    },
    /// Metrics against rotation of phantom and trajectory.
    Rotation {
        #[arg(long)]
        data: PathBuf,
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        angles: Vec<f64>,
    },
    /// Train on the first n subjects for each n and score on the test phantom.
    LimitedData {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        subjects: Vec<usize>,
    },
}

fn parse_manifold(s: &str) -> Result<Manifold, String> {
    Manifold::ALL.into_iter().find(|m| m.tag() == s).ok_or_else(|| format!("unknown manifold {s:?}"))
}

fn run(cli: Cli) -> Result<(), LabError> {
    let overrides = Overrides { config: cli.config, profile: cli.profile, seed: cli.seed, out: cli.out };
    let mut cfg = ExperimentConfig::load(&overrides)?;
    match cli.command {
        Command::Generate => {
            let ds = cmd_generate(&cfg)?;
            eprintln!("wrote {} training subjects to {}", ds.subjects, ds.root.display());
        }
        Command::Train { data, domain, target, steps, resume, stop_after } => {
            if domain.is_some() || target.is_some() {
                let base = cfg.profile.train_config(domain.unwrap_or(cfg.train.domain), target.unwrap_or(cfg.train.target));
                cfg.train = cine_train::TrainConfig { seed: cfg.train.seed, total_steps: cfg.train.total_steps, ..base };
            }
            if let Some(s) = steps {
                cfg.train.total_steps = s;
            }
            cfg.validate()?;
            let outcome = cmd_train(&cfg, &data, resume.as_deref(), stop_after)?;
            if let (Some(a), Some(b)) = (outcome.trace.first_train_loss(), outcome.trace.last_train_loss()) {
                eprintln!("train loss {a:.4} -> {b:.4} after {} steps", outcome.steps_done);
            }
        }
        Command::Reconstruct { checkpoint, data, volume, truth } => {
            let source = match (data, volume) {
                (Some(d), _) => Source::Dataset(d),
                (None, Some(input)) => Source::Volume { input, truth },
                (None, None) => return Err(LabError::Config("--data or --volume is required".into())),
            };
            for row in cmd_reconstruct(&checkpoint, &source, &cfg.out)? {
                eprintln!("{}: psnr {:.2} -> {:.2} dB", row.name, row.input.frames.psnr, row.estimate.frames.psnr);
            }
        }
        Command::Homology { data, manifolds } => {
            let manifolds = if manifolds.is_empty() { Manifold::ALL.to_vec() } else { manifolds };
            cmd_homology(&cfg, &data, &manifolds)?;
        }
        Command::Rotation { data, checkpoints, angles } => {
            let angles = if angles.is_empty() { DEFAULT_ANGLES.to_vec() } else { angles };
            let paths: Vec<&Path> = checkpoints.iter().map(PathBuf::as_path).collect();
            cmd_rotation_experiment(&cfg, &data, &paths, &angles)?;
        }
        Command::LimitedData { data, subjects } => {
            for row in cmd_limited_data(&cfg, &data, &subjects)? {
                eprintln!("n = {}: psnr {:.2} dB", row.subjects, row.report.frames.psnr);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
