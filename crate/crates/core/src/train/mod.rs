//! One-step supervised training with input noise.

mod noise;
mod optim;

pub use noise::{add_noise, noisy_targets, walk_noise, NoisySample, GAMMA};
pub use optim::{lr_schedule, masked_mse, Adam};

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::DomainSchema;
use crate::mesh::{transfer_state, NodeType, SimMesh};
use crate::model::Model;
use crate::nn::NetConfig;
use crate::sizing::{estimate_sizing, SizingField};
use crate::trajectory::{Dataset, Trajectory};

/// A supervised transition with every state on the current mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub trajectory: usize,
    pub step: usize,
    pub current: SimMesh,
    /// Most recent first.
    pub history: Vec<SimMesh>,
    pub next: SimMesh,
    /// Sizing of the next mesh, at the current nodes.
    pub sizing: Option<SizingField>,
}

impl Sample {
    /// Nodes that are supervised.
    pub fn mask(&self) -> Vec<bool> {
        self.current.node_types().iter().map(|&t| t == NodeType::Normal).collect()
    }
}

/// Cuts trajectories into samples, interpolating neighbouring states onto
/// each current mesh when the mesh changes between steps. Sizing targets are
/// the trajectory's recorded fields when it has them, otherwise the field
/// estimated from the next mesh.
pub fn prepare_samples(trajectories: &[Trajectory], schema: &DomainSchema) -> Result<Vec<Sample>> {
    let h = schema.history;
    let mut out = Vec::new();
    for (ti, traj) in trajectories.iter().enumerate() {
        for t in h..traj.len().saturating_sub(1) {
            let current = &traj.states[t];
            schema.check_mesh(current)?;
            let history = (1..=h)
                .map(|k| transfer_state(&traj.states[t - k], current))
                .collect::<Result<Vec<_>>>()?;
            let next_mesh = &traj.states[t + 1];
            let next = transfer_state(next_mesh, current)?;
            let sizing = if !schema.sizing_head {
                None
            } else if let Some(fields) = &traj.sizing {
                Some(fields[t].clone())
            } else {
                let s = estimate_sizing(next_mesh)?;
                Some(if next_mesh.cells() == current.cells() && next_mesh.mesh_pos_flat() == current.mesh_pos_flat() {
                    s
                } else {
                    let q: Vec<[f64; 2]> = (0..current.node_count()).map(|i| current.uv(i)).collect();
                    s.transfer(next_mesh, &q)?
                })
            };
            out.push(Sample {
                trajectory: ti,
                step: t,
                current: current.clone(),
                history,
                next,
                sizing,
            });
        }
    }
    Ok(out)
}

/// Training hyperparameters; the JSON file form of training configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Expected schema name; checked against the dataset when set.
    pub schema: Option<String>,
    pub width: usize,
    pub blocks: usize,
    pub hidden_layers: usize,
    /// Overrides the dataset schema's history length.
    pub history: Option<usize>,
    /// Overrides the schema's noise scales (one per integrated channel).
    pub noise: Option<Vec<f64>>,
    pub gamma: f64,
    pub steps: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    /// Defaults to half of `steps`.
    pub decay_steps: Option<usize>,
    pub seed: u64,
    /// Graphs per optimizer step.
    pub batch_size: usize,
    /// Noised samples folded into the normalizers before optimizing.
    pub normalizer_samples: usize,
    pub log_every: usize,
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            schema: None,
            width: 64,
            blocks: 8,
            hidden_layers: 2,
            history: None,
            noise: None,
            gamma: GAMMA,
            steps: 50_000,
            lr_start: 1e-4,
            lr_end: 1e-6,
            decay_steps: None,
            seed: 0,
            batch_size: 1,
            normalizer_samples: 1000,
            log_every: 100,
            checkpoint_every: 10_000,
        }
    }
}

impl TrainConfig {
    pub fn read(path: impl AsRef<Path>) -> Result<TrainConfig> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn net(&self) -> NetConfig {
        NetConfig {
            latent: self.width,
            hidden_layers: self.hidden_layers,
            blocks: self.blocks,
        }
    }

    pub fn decay(&self) -> usize {
        self.decay_steps.unwrap_or(self.steps / 2)
    }

    fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.width == 0 || self.hidden_layers == 0 {
            errs.push("width and hidden_layers must be positive".to_string());
        }
        if self.batch_size == 0 {
            errs.push("batch_size must be positive".into());
        }
        if !(self.lr_start > 0.0 && self.lr_end > 0.0) {
            errs.push("learning rates must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            errs.push("gamma must lie in [0, 1]".into());
        }
        if let Some(n) = &self.noise {
            if n.iter().any(|v| !(*v >= 0.0)) {
                errs.push("noise scales must be non-negative".into());
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }

    /// The dataset schema adjusted by this configuration.
    pub fn schema_for(&self, base: &DomainSchema) -> Result<DomainSchema> {
        if let Some(name) = &self.schema {
            if *name != base.name {
                return Err(Error::Config(format!(
                    "configuration expects schema {name}, dataset has {}",
                    base.name
                )));
            }
        }
        let mut s = base.clone();
        if let Some(h) = self.history {
            s.history = h;
        }
        if let Some(n) = &self.noise {
            s.noise = n.clone();
        }
        s.validate()?;
        Ok(s)
    }
}

/// One row of the metrics log.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub step: usize,
    /// Mean loss since the previous row.
    pub loss: f64,
    pub lr: f64,
    pub wall_seconds: f64,
}

pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<LogRow>,
}

/// Trains a model on prepared samples. With `out_dir`, writes
/// `model.ckpt` (also periodically) and `metrics.csv` there.
pub fn train(samples: &[Sample], schema: &DomainSchema, config: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    config.validate()?;
    schema.validate()?;
    if samples.is_empty() {
        return Err(Error::Validation(vec!["no training samples".into()]));
    }
    if samples.iter().any(|s| s.history.len() != schema.history) {
        return Err(Error::Config("samples were prepared with a different history length".into()));
    }
    let sigma = schema.noise.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = Model::with_rng(schema.clone(), config.net(), &mut rng)?;

    let noisy = |model: &Model, idx: usize, rng: &mut ChaCha8Rng| -> Result<(NoisySample, Vec<f64>)> {
        let s = &samples[idx];
        let n = add_noise(schema, &s.current, &s.history, &s.next, s.sizing.as_ref(), &sigma, config.gamma, rng)?;
        let scripted = model.schema.integrated_values(&s.next);
        Ok((n, scripted))
    };

    for _ in 0..config.normalizer_samples {
        let idx = rng.random_range(0..samples.len());
        let (n, scripted) = noisy(&model, idx, &mut rng)?;
        let hist: Vec<&SimMesh> = n.history.iter().collect();
        let graph = model.encode(&n.current, &hist, Some(&scripted))?;
        model.accumulate_inputs(&graph);
        model.accumulate_targets(&n.targets, &samples[idx].mask());
    }
    model.freeze();

    let sizes: Vec<usize> = model.net.tensors().iter().map(|t| t.len()).collect();
    let mut adam = Adam::new(&sizes);
    let start = Instant::now();
    let mut log = Vec::new();
    let mut csv = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join("metrics.csv");
            let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            writeln!(f, "step,loss,lr,wall_seconds").map_err(|e| Error::io(&path, e))?;
            Some((f, path))
        }
        None => None,
    };
    let mut window = (0.0, 0usize);
    let scale = 1.0 / config.batch_size as f64;
    for step in 0..config.steps {
        let lr = lr_schedule(step, config.decay(), config.lr_start, config.lr_end);
        let mut grad = model.net.zeros_like();
        let mut batch_loss = 0.0;
        for _ in 0..config.batch_size {
            let idx = rng.random_range(0..samples.len());
            let (n, scripted) = noisy(&model, idx, &mut rng)?;
            let hist: Vec<&SimMesh> = n.history.iter().collect();
            let graph = model.normalize_graph(&model.encode(&n.current, &hist, Some(&scripted))?);
            let target = model.output_norm.apply(&n.targets);
            let (pred, cache) = model.net.forward(&graph);
            let (loss, mut dpred) = masked_mse(&pred, &target, &samples[idx].mask())?;
            if !loss.is_finite() {
                let s = &samples[idx];
                log::error!(
                    "non-finite loss at step {step}: trajectory {} step {} (sample {idx}), seed {}",
                    s.trajectory,
                    s.step,
                    config.seed
                );
                return Err(Error::NonFinite(format!(
                    "loss is {loss} at training step {step} on sample {idx} (trajectory {}, step {}), seed {}",
                    s.trajectory, s.step, config.seed
                )));
            }
            dpred.as_mut_slice().iter_mut().for_each(|g| *g *= scale);
            model.net.backward(&graph, &cache, &dpred, &mut grad);
            batch_loss += loss * scale;
        }
        {
            let grads = grad.tensors();
            let mut params = model.net.tensors_mut();
            adam.step(&mut params, &grads, lr);
        }
        window.0 += batch_loss;
        window.1 += 1;
        let last = step + 1 == config.steps;
        if (config.log_every > 0 && (step + 1) % config.log_every == 0) || last {
            let row = LogRow {
                step: step + 1,
                loss: window.0 / window.1 as f64,
                lr,
                wall_seconds: start.elapsed().as_secs_f64(),
            };
            log::info!("step {} loss {:.6e} lr {:.3e}", row.step, row.loss, row.lr);
            if let Some((f, path)) = csv.as_mut() {
                writeln!(f, "{},{},{},{:.3}", row.step, row.loss, row.lr, row.wall_seconds)
                    .map_err(|e| Error::io(&*path, e))?;
            }
            log.push(row);
            window = (0.0, 0);
        }
        if let Some(dir) = out_dir {
            if config.checkpoint_every > 0 && (step + 1) % config.checkpoint_every == 0 && !last {
                model.save(dir.join("model.ckpt"))?;
            }
        }
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        model.save(dir.join("model.ckpt"))?;
    }
    Ok(TrainOutcome { model, log })
}

/// Loads the training split of a dataset directory and trains on it.
pub fn train_dataset(dataset: &Dataset, config: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    let schema = config.schema_for(&dataset.manifest.schema)?;
    let samples = prepare_samples(&dataset.train, &schema)?;
    train(&samples, &schema, config, out_dir)
}
