//! `meshsim` command-line driver.
//!
//! Exit codes: 0 on success, 1 on usage or validation errors, 2 on file
//! system and file format errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{error::ErrorKind, Parser, Subcommand};
use meshsim::mesh::{ensure_valid, read_mesh_json, write_mesh_json};
use meshsim::nn::{gradient_check, NetConfig};
use meshsim::remesh::remesh;
use meshsim::rollout::{evaluate, rollout, write_metrics, write_obj_sequence, RemeshMode};
use meshsim::sizing::estimate_sizing;
use meshsim::synth::{generate_dataset, Domain, GenConfig};
use meshsim::train::{train_dataset, TrainConfig};
use meshsim::trajectory::Dataset;
use meshsim::{Error, Model, Result, SizingField, Trajectory};

const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser, Debug)]
#[command(name = "meshsim", version, about = "Learned mesh-based simulation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic trajectory dataset.
    GenData {
        /// One of cloth-spring, cloth-remesh, cloth-obstacle, diffusion.
        #[arg(long)]
        domain: String,
        /// Number of trajectories.
        #[arg(long, default_value_t = 100)]
        trajectories: usize,
        /// Output steps per trajectory.
        #[arg(long, default_value_t = 100)]
        steps: usize,
        /// Random seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Grid resolution per side (domain default if omitted).
        #[arg(long)]
        grid: Option<usize>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a dataset directory.
    Train {
        /// Dataset directory with manifest.json.
        #[arg(long)]
        data: PathBuf,
        /// Training configuration JSON (defaults if omitted).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Random seed; overrides the configuration's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for model.ckpt and metrics.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Roll a trained model out from the initial states of a trajectory.
    Rollout {
        /// Model checkpoint.
        #[arg(long)]
        model: PathBuf,
        /// Dataset directory.
        #[arg(long)]
        data: PathBuf,
        /// Trajectory index over train, valid and test in manifest order.
        #[arg(long, default_value_t = 0)]
        traj_index: usize,
        /// Number of steps (all recorded steps if omitted).
        #[arg(long)]
        steps: Option<usize>,
        /// One of none, learned-sizing, ground-truth-mesh.
        #[arg(long, default_value = "none")]
        remesh_mode: String,
        /// Output trajectory file.
        #[arg(long)]
        out: PathBuf,
        /// Also write one OBJ file per state into this directory.
        #[arg(long)]
        obj_dir: Option<PathBuf>,
    },
    /// Compare a predicted trajectory against the truth.
    Eval {
        /// Predicted trajectory file.
        #[arg(long)]
        pred: PathBuf,
        /// Ground-truth trajectory file.
        #[arg(long)]
        truth: PathBuf,
        /// Metrics JSON; the per-step CSV is written beside it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Remesh a mesh JSON file with a sizing JSON file.
    Remesh {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        sizing: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate the sizing field implied by a mesh.
    EstimateSizing {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check analytic network gradients against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData {
            domain,
            trajectories,
            steps,
            seed,
            grid,
            out,
        } => {
            let domain = Domain::parse(&domain).ok_or_else(|| Error::Config(format!("unknown domain {domain:?}")))?;
            let mut config = GenConfig::new(domain, trajectories, steps, seed);
            config.grid = grid;
            let manifest = generate_dataset(&config, &out)?;
            println!("wrote {} trajectories to {}", manifest.trajectories, out.display());
        }
        Command::Train { data, config, seed, out } => {
            let mut config = match config {
                Some(p) => TrainConfig::read(p)?,
                None => TrainConfig::default(),
            };
            if let Some(seed) = seed {
                config.seed = seed;
            }
            let dataset = Dataset::load(&data)?;
            let outcome = train_dataset(&dataset, &config, Some(&out))?;
            if let Some(last) = outcome.log.last() {
                println!("step {} loss {:.6e}", last.step, last.loss);
            }
        }
        Command::Rollout {
            model,
            data,
            traj_index,
            steps,
            remesh_mode,
            out,
            obj_dir,
        } => {
            let mode = RemeshMode::parse(&remesh_mode)
                .ok_or_else(|| Error::Config(format!("unknown remesh mode {remesh_mode:?}")))?;
            let model = Model::load(&model)?;
            let dataset = Dataset::load(&data)?;
            let truth = dataset
                .get(traj_index)
                .ok_or_else(|| Error::Config(format!("no trajectory with index {traj_index}")))?;
            let steps = steps.unwrap_or_else(|| truth.len().saturating_sub(model.schema.history + 1));
            let pred = rollout(&model, truth, steps, mode)?;
            pred.save(&out)?;
            if let Some(dir) = obj_dir {
                write_obj_sequence(&pred, dir)?;
            }
            match pred.truncated_at {
                Some(t) => println!("rollout truncated at step {t}"),
                None => println!("rolled out {steps} steps"),
            }
        }
        Command::Eval { pred, truth, out } => {
            let metrics = evaluate(&Trajectory::load(&pred)?, &Trajectory::load(&truth)?)?;
            write_metrics(&out, &metrics)?;
            println!("rmse_1 {} rmse_50 {} rmse_all {}", metrics.rmse_1, metrics.rmse_50, metrics.rmse_all);
        }
        Command::Remesh { mesh, sizing, out } => {
            let mesh = read_mesh_json(&mesh)?;
            ensure_valid(&mesh)?;
            let sizing = SizingField::read_json(&sizing)?;
            let result = remesh(&mesh, &sizing)?;
            if result.budget_exhausted {
                log::warn!("split budget exhausted");
            }
            write_mesh_json(&out, &result.mesh)?;
            let s = result.stats;
            println!("splits {} flips {} collapses {}", s.splits, s.flips, s.collapses);
        }
        Command::EstimateSizing { mesh, out } => {
            let mesh = read_mesh_json(&mesh)?;
            estimate_sizing(&mesh)?.write_json(&out)?;
        }
        Command::Gradcheck { seed } => {
            let config = NetConfig {
                latent: 16,
                hidden_layers: 2,
                blocks: 2,
            };
            let r = gradient_check(config, 20, seed, 1e-5);
            println!(
                "parameters {} (skipped {} at ReLU kinks) max relative error {:e}",
                r.parameters, r.kinks, r.max_rel_err
            );
            if !(r.max_rel_err < GRADCHECK_TOLERANCE) {
                return Err(Error::Validation(vec![format!(
                    "gradient check failed: {:e} >= {GRADCHECK_TOLERANCE:e}",
                    r.max_rel_err
                )]));
            }
        }
    }
    Ok(())
}

fn exit_code(err: &Error) -> u8 {
    if err.is_io() {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
