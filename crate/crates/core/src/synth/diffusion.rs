//! Explicit graph diffusion of quantity channel 0 on a fixed mesh. INFLOW
//! nodes are Dirichlet boundaries; only NORMAL nodes are updated.

use crate::error::{Error, Result};
use crate::mesh::{neighbors, NodeType, SimMesh};

#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionParams {
    /// Exchange rate per edge and iteration.
    pub alpha: f64,
    /// Iterations per output step.
    pub substeps: usize,
}

impl Default for DiffusionParams {
    fn default() -> Self {
        DiffusionParams {
            alpha: 0.1,
            substeps: 4,
        }
    }
}

/// One Jacobi-style iteration `q_i += α Σ_j (q_j - q_i)` over the nodes
/// flagged in `free`.
pub fn diffuse(q: &mut [f64], adjacency: &[Vec<usize>], free: &[bool], alpha: f64) {
    let old = q.to_vec();
    for (i, nb) in adjacency.iter().enumerate() {
        if free[i] {
            q[i] = old[i] + alpha * nb.iter().map(|&j| old[j] - old[i]).sum::<f64>();
        }
    }
}

/// Advances the field by one output step.
pub fn diffusion_step(mesh: &SimMesh, params: &DiffusionParams) -> Result<SimMesh> {
    if mesh.n_quantities() == 0 {
        return Err(Error::Dimension("diffusion needs a quantity channel".into()));
    }
    let adjacency = neighbors(mesh)?;
    let max_degree = adjacency.iter().map(Vec::len).max().unwrap_or(0);
    if !(params.alpha > 0.0) || params.alpha * max_degree as f64 >= 1.0 {
        return Err(Error::Config(format!(
            "diffusion rate {} is unstable for maximum degree {max_degree}",
            params.alpha
        )));
    }
    let nq = mesh.n_quantities();
    let mut q: Vec<f64> = (0..mesh.node_count()).map(|i| mesh.quantity(i)[0]).collect();
    let free: Vec<bool> = mesh.node_types().iter().map(|&t| t == NodeType::Normal).collect();
    for _ in 0..params.substeps {
        diffuse(&mut q, &adjacency, &free, params.alpha);
    }
    let mut quant = mesh.quantities_flat().to_vec();
    for (i, v) in q.into_iter().enumerate() {
        quant[i * nq] = v;
    }
    mesh.with_quantities(quant)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{grid_triangles, Cells};

    fn plate(nx: usize, ny: usize, boundary: Option<fn(f64, f64) -> f64>) -> SimMesh {
        let (uv, tris) = grid_triangles(nx, ny, 1.0, 1.0);
        let n = nx * ny;
        let on_edge = |i: usize| {
            let (a, b) = (i % nx, i / nx);
            a == 0 || b == 0 || a == nx - 1 || b == ny - 1
        };
        let types = (0..n)
            .map(|i| if boundary.is_some() && on_edge(i) { NodeType::Inflow } else { NodeType::Normal })
            .collect();
        let q = (0..n)
            .map(|i| match boundary {
                Some(f) if on_edge(i) => f(uv[2 * i], uv[2 * i + 1]),
                _ => ((i * 7919) % 13) as f64 / 13.0,
            })
            .collect();
        SimMesh::new(2, 0, 1, uv, vec![], types, q, Cells::Triangles(tris)).unwrap()
    }

    #[test]
    fn two_node_exchange() {
        let mut q = vec![0.0, 1.0];
        diffuse(&mut q, &[vec![1], vec![0]], &[true, true], 0.25);
        assert_eq!(q, vec![0.25, 0.75]);
    }

    #[test]
    fn uniform_field_is_unchanged() {
        let m = plate(5, 5, None).with_quantities(vec![0.7; 25]).unwrap();
        assert_eq!(diffusion_step(&m, &DiffusionParams::default()).unwrap(), m);
    }

    #[test]
    fn total_is_conserved_without_boundaries() {
        let mut m = plate(6, 7, None);
        let total = |m: &SimMesh| m.quantities_flat().iter().sum::<f64>();
        let t0 = total(&m);
        for _ in 0..50 {
            m = diffusion_step(&m, &DiffusionParams::default()).unwrap();
            assert!((total(&m) - t0).abs() < 1e-12 * t0.abs().max(1.0));
        }
    }

    #[test]
    fn converges_to_harmonic_boundary_extension() {
        // the limit is the discrete harmonic extension: every free node
        // equals the mean of its neighbours
        let mut m = plate(10, 20, Some(|x, y| 1.0 + 2.0 * x - y));
        assert_eq!(m.node_count(), 200);
        let p = DiffusionParams { alpha: 0.12, substeps: 1 };
        let mut last = f64::INFINITY;
        for _ in 0..20000 {
            let next = diffusion_step(&m, &p).unwrap();
            last = next
                .quantities_flat()
                .iter()
                .zip(m.quantities_flat())
                .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
            m = next;
            if last < 1e-12 {
                break;
            }
        }
        assert!(last < 1e-10, "max change per step {last}");
        let adj = neighbors(&m).unwrap();
        for (i, nb) in adj.iter().enumerate() {
            if m.node_type(i) == NodeType::Normal {
                let q = |j: usize| m.quantity(j)[0];
                let mean = nb.iter().map(|&j| q(j)).sum::<f64>() / nb.len() as f64;
                assert!((q(i) - mean).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn unstable_rate_is_config_error() {
        let m = plate(4, 4, None);
        let p = DiffusionParams { alpha: 0.2, substeps: 1 };
        assert!(matches!(diffusion_step(&m, &p), Err(Error::Config(_))));
    }
}
