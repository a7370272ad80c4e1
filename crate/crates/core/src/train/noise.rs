//! Training noise on inputs with matching target adjustment.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::graph::DomainSchema;
use crate::mesh::{NodeType, SimMesh};
use crate::model::raw_targets;
use crate::nn::Matrix;
use crate::sizing::SizingField;

/// Blend between position-consistent and velocity-consistent
/// second-order targets.
pub const GAMMA: f64 = 0.1;

/// Noised inputs and the raw targets that undo the noise.
#[derive(Clone, Debug)]
pub struct NoisySample {
    pub current: SimMesh,
    /// Most recent first.
    pub history: Vec<SimMesh>,
    pub targets: Matrix,
}

/// Per-state noise on the integrated field: a random walk from the oldest
/// history state (left clean) to the current state, with per-step variance
/// `σ² / h` so the current state's noise has variance `σ²`. With no history
/// only the current state is noised. Returns offsets for `[current,
/// history...]`; non-NORMAL nodes get zero.
pub fn walk_noise<R: Rng + ?Sized>(
    n_nodes: usize,
    types: &[NodeType],
    sigma: &[f64],
    history: usize,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    let w = sigma.len();
    let steps = history.max(1);
    let scale = 1.0 / (steps as f64).sqrt();
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    // walk[k] is the noise of the state k steps after the oldest one
    let mut walk = vec![vec![0.0; n_nodes * w]; steps + 1];
    for k in 1..=steps {
        for i in 0..n_nodes {
            for c in 0..w {
                let step = if types[i] == NodeType::Normal && sigma[c] > 0.0 {
                    sigma[c] * scale * std.sample(rng)
                } else {
                    0.0
                };
                walk[k][i * w + c] = walk[k - 1][i * w + c] + step;
            }
        }
    }
    walk.reverse();
    // [current, history_1, ..., history_h]
    walk.truncate(history + 1);
    walk
}

/// Applies given noise offsets and computes adjusted raw targets.
///
/// First order: the target derivative is `x_{t+1} - x̃_t`. Second order: a
/// `γ` blend of the acceleration reproducing the next position and the one
/// reproducing the next velocity from the noised inputs.
pub fn noisy_targets(
    schema: &DomainSchema,
    current: &SimMesh,
    history: &[SimMesh],
    next: &SimMesh,
    sizing: Option<&SizingField>,
    offsets: &[Vec<f64>],
    gamma: f64,
) -> Result<NoisySample> {
    if offsets.len() != history.len() + 1 {
        return Err(Error::Dimension("one noise vector per input state is needed".into()));
    }
    let shift = |m: &SimMesh, o: &[f64]| -> Result<SimMesh> {
        let mut q = schema.integrated_values(m);
        if q.len() != o.len() {
            return Err(Error::Dimension("noise does not match the integrated field".into()));
        }
        for (a, b) in q.iter_mut().zip(o) {
            *a += b;
        }
        schema.with_integrated(m, &q)
    };
    let cur = shift(current, &offsets[0])?;
    let hist = history
        .iter()
        .zip(&offsets[1..])
        .map(|(m, o)| shift(m, o))
        .collect::<Result<Vec<_>>>()?;
    let mut targets = raw_targets(schema, &cur, hist.first(), next, sizing)?;
    if schema.order == 2 {
        let prev = hist.first().expect("raw_targets checked the previous state");
        let iw = schema.integrated_width();
        let (x, xn) = (schema.integrated_values(current), schema.integrated_values(next));
        let (xt, xp) = (schema.integrated_values(&cur), schema.integrated_values(prev));
        for i in 0..current.node_count() {
            for d in 0..iw {
                let k = i * iw + d;
                let acc_pos = targets.get(i, d);
                let acc_vel = (xn[k] - x[k]) - (xt[k] - xp[k]);
                targets.set(i, d, gamma * acc_pos + (1.0 - gamma) * acc_vel);
            }
        }
    }
    Ok(NoisySample {
        current: cur,
        history: hist,
        targets,
    })
}

/// Draws noise with per-channel scale `sigma` and returns the noised sample.
#[allow(clippy::too_many_arguments)]
pub fn add_noise<R: Rng + ?Sized>(
    schema: &DomainSchema,
    current: &SimMesh,
    history: &[SimMesh],
    next: &SimMesh,
    sizing: Option<&SizingField>,
    sigma: &[f64],
    gamma: f64,
    rng: &mut R,
) -> Result<NoisySample> {
    if sigma.len() != schema.integrated_width() {
        return Err(Error::Config(format!(
            "{} noise scales for {} integrated channels",
            sigma.len(),
            schema.integrated_width()
        )));
    }
    let offsets = walk_noise(current.node_count(), current.node_types(), sigma, history.len(), rng);
    noisy_targets(schema, current, history, next, sizing, &offsets, gamma)
}
