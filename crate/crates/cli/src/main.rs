//! `drdf`: dataset generation, training, reconstruction and evaluation.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use drdf::{Error, Result};

use commands::{Overrides, ReconMode, Variant};
use config::RunConfig;

#[derive(Parser)]
#[command(name = "drdf", version, about = "Few-view scene reconstruction with directed ray distance fields")]
struct Cli {
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true, env = "DRDF_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Run configuration (TOML).
    #[arg(long, short)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate scenes, rendered views and benchmark view sets.
    Gen(ConfigArg),
    /// Train the fusion model on the training split.
    Train {
        #[command(flatten)]
        config: ConfigArg,
        /// Override `train.steps`.
        #[arg(long)]
        steps: Option<usize>,
        /// Continue from the run directory's checkpoint.
        #[arg(long)]
        resume: bool,
        /// Sample query depths uniformly only.
        #[arg(long)]
        no_gaussian_sampling: bool,
        /// Add self-attention between the samples of a ray.
        #[arg(long)]
        ray_attention: bool,
    },
    /// Decode a view set into point clouds.
    Reconstruct {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        set: String,
        /// Defaults to the run directory's checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Decode the exact field of the scene instead of the model.
        #[arg(long, conflicts_with = "independent")]
        gt_field: bool,
        /// Decode each view on its own and merge the clouds.
        #[arg(long)]
        independent: bool,
        /// Defaults to `<run_dir>/recon/<set>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a reconstruction against the scene.
    Eval {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        set: String,
        /// Defaults to `<run_dir>/recon/<set>`.
        #[arg(long)]
        recon: Option<PathBuf>,
        /// Sweep the configured pose-noise grid, re-decoding from perturbed cameras.
        #[arg(long)]
        noise: bool,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train and score the full model, no Gaussian sampling and ray attention.
    Ablate {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Finite-difference gradient check on a tiny model.
    Gradcheck {
        #[arg(long)]
        ray_attention: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load(arg: &ConfigArg, overrides: &Overrides) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&arg.config)?;
    overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Gen(c) => {
            let cfg = load(&c, &Overrides::default())?;
            commands::gen(&cfg)?;
        }
        Command::Train {
            config,
            steps,
            resume,
            no_gaussian_sampling,
            ray_attention,
        } => {
            let o = Overrides {
                steps,
                no_gaussian_sampling,
                ray_attention,
            };
            let cfg = load(&config, &o)?;
            let curve = commands::train_into(&cfg, &cfg.run_dir, resume)?;
            if let Some(last) = curve.last() {
                println!("finished at step {} with loss {:.5}", last.step, last.loss);
            }
        }
        Command::Reconstruct {
            config,
            set,
            checkpoint,
            gt_field,
            independent,
            out,
        } => {
            let cfg = load(&config, &Overrides::default())?;
            let mode = match (gt_field, independent) {
                (true, _) => ReconMode::GroundTruth,
                (_, true) => ReconMode::Independent,
                _ => ReconMode::Fused,
            };
            let ckpt = checkpoint.unwrap_or_else(|| commands::checkpoint_path(&cfg));
            let out = out.unwrap_or_else(|| cfg.run_dir.join("recon").join(&set));
            commands::reconstruct_set(&cfg, &set, mode, Some(&ckpt), &out)?;
        }
        Command::Eval {
            config,
            set,
            recon,
            noise,
            checkpoint,
        } => {
            let cfg = load(&config, &Overrides::default())?;
            let out = cfg.run_dir.join("eval");
            if noise {
                let ckpt = checkpoint.unwrap_or_else(|| commands::checkpoint_path(&cfg));
                commands::eval_noise(&cfg, &set, &ckpt, &out)?;
            } else {
                let recon = recon.unwrap_or_else(|| cfg.run_dir.join("recon").join(&set));
                commands::eval_set(&cfg, &set, &recon, &out)?;
            }
        }
        Command::Ablate { config, steps } => {
            let o = Overrides {
                steps,
                ..Overrides::default()
            };
            let cfg = load(&config, &o)?;
            commands::ablate(&cfg, &Variant::ALL)?;
        }
        Command::Gradcheck { ray_attention, seed } => {
            commands::gradcheck(ray_attention, seed)?;
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => 2,
        Error::NumericFailure { .. } => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
