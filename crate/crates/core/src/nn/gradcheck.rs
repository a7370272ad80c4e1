//! Central finite-difference check of the analytic network gradient.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::matrix::Matrix;
use super::network::{NetConfig, Network};
use crate::graph::{EdgeSet, MultiGraph};

/// Random tree-shaped graph with `n` nodes, bidirectional mesh edges, about
/// `n / 2` world edges and features uniform in [-1, 1).
pub fn random_graph(n: usize, widths: [usize; 3], rng: &mut ChaCha8Rng) -> MultiGraph {
    let mut mesh = Vec::new();
    for i in 1..n {
        let j = rng.random_range(0..i);
        mesh.push((i, j));
        mesh.push((j, i));
    }
    let mut world = Vec::new();
    for _ in 0..n / 2 {
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        if a != b {
            world.push((a, b));
        }
    }
    let mut rand_matrix =
        |r: usize, c: usize| Matrix::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect());
    let nf = rand_matrix(n, widths[0]);
    let mf = rand_matrix(mesh.len(), widths[1]);
    let wf = rand_matrix(world.len(), widths[2]);
    MultiGraph {
        node_features: nf,
        mesh_edges: EdgeSet::new(&mesh, mf),
        world_edges: EdgeSet::new(&world, wf),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub parameters: usize,
    pub max_rel_err: f64,
    /// Parameters whose ±`eps` perturbation switched a ReLU unit; central
    /// differences are meaningless there and they are left out.
    pub kinks: usize,
}

/// Compares every parameter's gradient of a random linear probe of the
/// outputs against central differences with step `eps`. Relative errors
/// use `max(|fd|, |analytic|, 1e-6)` as denominator.
pub fn gradient_check(config: NetConfig, nodes: usize, seed: u64, eps: f64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let widths = [5, 4, 3];
    let net = Network::new(config, widths[0], widths[1], widths[2], 2, &mut rng);
    let g = random_graph(nodes, widths, &mut rng);
    let probe = Matrix::from_vec(nodes, 2, (0..2 * nodes).map(|_| rng.random_range(-1.0..1.0)).collect());
    let loss = |out: &Matrix| -> f64 { out.as_slice().iter().zip(probe.as_slice()).map(|(a, b)| a * b).sum() };
    let (_, cache) = net.forward(&g);
    let mut grad = net.zeros_like();
    net.backward(&g, &cache, &probe, &mut grad);
    let analytic: Vec<Vec<f64>> = grad.tensors().iter().map(|t| t.to_vec()).collect();
    let mut p = net.clone();
    let mut worst: f64 = 0.0;
    let mut kinks = 0;
    for (t, gt) in analytic.iter().enumerate() {
        for (k, &a) in gt.iter().enumerate() {
            let orig = p.tensors()[t][k];
            p.tensors_mut()[t][k] = orig + eps;
            let (out_up, cache_up) = p.forward(&g);
            p.tensors_mut()[t][k] = orig - eps;
            let (out_down, cache_down) = p.forward(&g);
            p.tensors_mut()[t][k] = orig;
            if cache_up.activation_pattern() != cache_down.activation_pattern() {
                kinks += 1;
                continue;
            }
            let fd = (loss(&out_up) - loss(&out_down)) / (2.0 * eps);
            worst = worst.max((fd - a).abs() / fd.abs().max(a.abs()).max(1e-6));
        }
    }
    GradCheck {
        parameters: net.parameter_count(),
        max_rel_err: worst,
        kinks,
    }
}
