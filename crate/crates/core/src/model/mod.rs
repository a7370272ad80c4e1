//! Next-step predictor: normalization, encode-process-decode and
//! integration of the decoded derivatives.

mod checkpoint;
mod normalizer;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{encode_features, DomainSchema, EdgeSet, MultiGraph};
use crate::mesh::{NodeType, SimMesh};
use crate::nn::{Matrix, NetConfig, Network};
use crate::sizing::{decode_sizing, SizingField};

pub use normalizer::{Normalizer, MAX_ACCUMULATE, SIGMA_MIN};

/// Network parameters, normalizer statistics and the schema they serve.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub schema: DomainSchema,
    pub net: Network,
    pub node_norm: Normalizer,
    pub mesh_edge_norm: Normalizer,
    pub world_edge_norm: Normalizer,
    pub output_norm: Normalizer,
}

/// Integrates decoded derivatives: `q + p` for first order and
/// `p + 2 q - q_prev` for second order.
pub fn integrate(q: &[f64], q_prev: Option<&[f64]>, p: &[f64], order: u8) -> Result<Vec<f64>> {
    if q.len() != p.len() {
        return Err(Error::Dimension(format!(
            "state has {} values, update has {}",
            q.len(),
            p.len()
        )));
    }
    match (order, q_prev) {
        (1, _) => Ok(q.iter().zip(p).map(|(q, p)| p + q).collect()),
        (2, Some(prev)) if prev.len() == q.len() => Ok(q
            .iter()
            .zip(prev)
            .zip(p)
            .map(|((q, qm), p)| p + 2.0 * q - qm)
            .collect()),
        (2, Some(_)) => Err(Error::Dimension("previous state has the wrong length".into())),
        (2, None) => Err(Error::Schema("second-order integration needs the previous state".into())),
        (o, _) => Err(Error::Schema(format!("unsupported integration order {o}"))),
    }
}

/// Raw (unnormalized) supervision targets, one row per node, laid out like
/// the decoder output.
///
/// Integrated channels hold the derivative that maps `current` (and `prev`
/// for second order) onto `next`; direct channels hold `next`'s
/// quantities; sizing channels hold `sizing`.
pub fn raw_targets(
    schema: &DomainSchema,
    current: &SimMesh,
    prev: Option<&SimMesh>,
    next: &SimMesh,
    sizing: Option<&SizingField>,
) -> Result<Matrix> {
    let n = current.node_count();
    if next.node_count() != n {
        return Err(Error::Dimension("next state has a different node count".into()));
    }
    let layout = schema.output_layout();
    let iw = schema.integrated_width();
    let q = schema.integrated_values(current);
    let qn = schema.integrated_values(next);
    let qp = match (schema.order, prev) {
        (2, Some(p)) => Some(schema.integrated_values(p)),
        (2, None) => return Err(Error::Schema("second-order targets need the previous state".into())),
        _ => None,
    };
    let mut out = Matrix::zeros(n, layout.width);
    for i in 0..n {
        let row = out.row_mut(i);
        for d in 0..iw {
            let k = i * iw + d;
            row[d] = match &qp {
                Some(qp) => qn[k] - 2.0 * q[k] + qp[k],
                None => qn[k] - q[k],
            };
        }
        for (c, &ch) in schema.direct_outputs.iter().enumerate() {
            row[layout.direct.start + c] = next.quantity(i)[ch];
        }
        if let Some(range) = &layout.sizing {
            let s = sizing
                .ok_or_else(|| Error::Schema("schema has a sizing head but no sizing target".into()))?;
            row[range.clone()].copy_from_slice(&s.tensors[i].to_array());
        }
    }
    Ok(out)
}

impl Model {
    pub fn new(schema: DomainSchema, config: NetConfig, seed: u64) -> Result<Model> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Model::with_rng(schema, config, &mut rng)
    }

    pub fn with_rng(schema: DomainSchema, config: NetConfig, rng: &mut ChaCha8Rng) -> Result<Model> {
        schema.validate()?;
        if config.latent == 0 || config.hidden_layers == 0 {
            return Err(Error::Config("latent width and hidden layers must be positive".into()));
        }
        let (nw, mw, ww, ow) = (
            schema.node_feature_width(),
            schema.mesh_edge_width(),
            schema.world_edge_width(),
            schema.output_width(),
        );
        Ok(Model {
            net: Network::new(config, nw, mw, ww, ow, rng),
            node_norm: Normalizer::new(nw),
            mesh_edge_norm: Normalizer::new(mw),
            world_edge_norm: Normalizer::new(ww),
            output_norm: Normalizer::new(ow),
            schema,
        })
    }

    pub fn is_frozen(&self) -> bool {
        self.node_norm.is_frozen()
            && self.mesh_edge_norm.is_frozen()
            && self.world_edge_norm.is_frozen()
            && self.output_norm.is_frozen()
    }

    pub fn freeze(&mut self) {
        self.node_norm.freeze();
        self.mesh_edge_norm.freeze();
        self.world_edge_norm.freeze();
        self.output_norm.freeze();
    }

    /// Folds a graph's input features into the input statistics.
    pub fn accumulate_inputs(&mut self, graph: &MultiGraph) {
        self.node_norm.accumulate(&graph.node_features);
        self.mesh_edge_norm.accumulate(&graph.mesh_edges.features);
        self.world_edge_norm.accumulate(&graph.world_edges.features);
    }

    /// Folds raw target rows of supervised nodes into the output statistics.
    pub fn accumulate_targets(&mut self, targets: &Matrix, mask: &[bool]) {
        for i in 0..targets.rows() {
            if mask[i] {
                self.output_norm.accumulate_row(targets.row(i));
            }
        }
    }

    /// Normalizes graph features with the current statistics.
    pub fn normalize_graph(&self, g: &MultiGraph) -> MultiGraph {
        let norm_edges = |e: &EdgeSet, n: &Normalizer| EdgeSet {
            senders: e.senders.clone(),
            receivers: e.receivers.clone(),
            features: n.apply(&e.features),
        };
        MultiGraph {
            node_features: self.node_norm.apply(&g.node_features),
            mesh_edges: norm_edges(&g.mesh_edges, &self.mesh_edge_norm),
            world_edges: norm_edges(&g.world_edges, &self.world_edge_norm),
        }
    }

    fn require_frozen(&self) -> Result<()> {
        if self.is_frozen() {
            Ok(())
        } else {
            Err(Error::State("model normalizers are still accumulating".into()))
        }
    }

    /// Builds the raw multigraph for a state.
    pub fn encode(&self, current: &SimMesh, history: &[&SimMesh], scripted_next: Option<&[f64]>) -> Result<MultiGraph> {
        let scripted = if self.schema.scripted_velocity { scripted_next } else { None };
        encode_features(current, history, &self.schema, scripted)
    }

    /// Decoder outputs in normalized space, one row per node.
    pub fn predict(&self, current: &SimMesh, history: &[&SimMesh], scripted_next: Option<&[f64]>) -> Result<Matrix> {
        self.require_frozen()?;
        let graph = self.encode(current, history, scripted_next)?;
        Ok(self.net.predict(&self.normalize_graph(&graph)))
    }

    /// Decoder outputs in physical units.
    pub fn predict_physical(&self, current: &SimMesh, history: &[&SimMesh], scripted_next: Option<&[f64]>) -> Result<Matrix> {
        let p = self.predict(current, history, scripted_next)?;
        self.output_norm.denormalize(&p)
    }

    /// Advances one step. `scripted_next` gives next-step integrated-field
    /// values (world positions for Lagrangian schemas) for every node; only
    /// non-NORMAL entries are read. Without it non-NORMAL nodes keep their
    /// current values.
    pub fn step(&self, current: &SimMesh, history: &[&SimMesh], scripted_next: Option<&[f64]>) -> Result<SimMesh> {
        Ok(self.step_with_sizing(current, history, scripted_next)?.0)
    }

    /// [`Model::step`] that also returns the decoded sizing field when the
    /// schema has a sizing head.
    pub fn step_with_sizing(
        &self,
        current: &SimMesh,
        history: &[&SimMesh],
        scripted_next: Option<&[f64]>,
    ) -> Result<(SimMesh, Option<SizingField>)> {
        let out = self.predict_physical(current, history, scripted_next)?;
        self.apply_outputs(current, history.first().copied(), &out, scripted_next)
    }

    /// Integrates physical decoder outputs into the next state.
    pub fn apply_outputs(
        &self,
        current: &SimMesh,
        prev: Option<&SimMesh>,
        out: &Matrix,
        scripted_next: Option<&[f64]>,
    ) -> Result<(SimMesh, Option<SizingField>)> {
        let schema = &self.schema;
        let n = current.node_count();
        let layout = schema.output_layout();
        let iw = schema.integrated_width();
        if out.rows() != n || out.cols() != layout.width {
            return Err(Error::Dimension("decoder output does not match the mesh".into()));
        }
        if let Some(s) = scripted_next {
            if s.len() != n * iw {
                return Err(Error::Dimension("scripted state has the wrong length".into()));
            }
        }
        let q = schema.integrated_values(current);
        let q_prev = prev.map(|p| schema.integrated_values(p));
        let mut p = Vec::with_capacity(n * iw);
        for i in 0..n {
            p.extend_from_slice(&out.row(i)[layout.integrated.clone()]);
        }
        let mut next = integrate(&q, q_prev.as_deref(), &p, schema.order)?;
        for i in 0..n {
            if current.node_type(i) != NodeType::Normal {
                let src = scripted_next.unwrap_or(&q);
                next[i * iw..(i + 1) * iw].copy_from_slice(&src[i * iw..(i + 1) * iw]);
            }
        }
        let mut mesh = schema.with_integrated(current, &next)?;
        if !schema.direct_outputs.is_empty() {
            let nq = mesh.n_quantities();
            let mut quantities = mesh.quantities_flat().to_vec();
            for i in (0..n).filter(|&i| current.node_type(i) == NodeType::Normal) {
                for (c, &ch) in schema.direct_outputs.iter().enumerate() {
                    quantities[i * nq + ch] = out.get(i, layout.direct.start + c);
                }
            }
            mesh = mesh.with_quantities(quantities)?;
        }
        let sizing = layout.sizing.map(|range| {
            let flat: Vec<f64> = (0..n).flat_map(|i| out.row(i)[range.clone()].to_vec()).collect();
            decode_sizing(&flat)
        });
        if !mesh.world_pos_flat().iter().chain(mesh.quantities_flat()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("predicted state".into()));
        }
        Ok((mesh, sizing))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::IntegratedField;
    use crate::mesh::{grid_triangles, Cells};

    fn diffusion_mesh() -> SimMesh {
        let (uv, tris) = grid_triangles(3, 3, 1.0, 1.0);
        let q: Vec<f64> = (0..9).map(|i| i as f64 * 0.1).collect();
        SimMesh::new(2, 0, 1, uv, vec![], vec![NodeType::Normal; 9], q, Cells::Triangles(tris)).unwrap()
    }

    fn frozen(mut m: Model) -> Model {
        m.freeze();
        m
    }

    #[test]
    fn integrate_examples() {
        assert_eq!(integrate(&[2.0], None, &[1.0], 1).unwrap(), vec![3.0]);
        let x = integrate(&[2.0], Some(&[1.4]), &[0.4], 2).unwrap()[0];
        assert!((x - 3.0).abs() < 1e-15);
        assert_eq!(integrate(&[2.5], None, &[0.0], 1).unwrap(), vec![2.5]);
        assert!(matches!(integrate(&[2.0], None, &[0.4], 2), Err(Error::Schema(_))));
    }

    #[test]
    fn zero_model_predicts_decoder_bias_everywhere() {
        let schema = DomainSchema::synthetic_diffusion();
        let mut m = frozen(Model::new(schema, NetConfig { latent: 8, hidden_layers: 2, blocks: 2 }, 0).unwrap());
        m.net = m.net.zeros_like();
        m.net.decoder.layers.last_mut().unwrap().b = vec![0.75];
        let out = m.predict(&diffusion_mesh(), &[], None).unwrap();
        assert!((0..out.rows()).all(|i| out.get(i, 0) == 0.75));
    }

    #[test]
    fn zero_output_first_order_keeps_state() {
        let schema = DomainSchema::synthetic_diffusion();
        let mut m = frozen(Model::new(schema, NetConfig { latent: 8, hidden_layers: 2, blocks: 1 }, 1).unwrap());
        m.net = m.net.zeros_like();
        let mesh = diffusion_mesh();
        let next = m.step(&mesh, &[], None).unwrap();
        assert_eq!(next, mesh);
    }

    #[test]
    fn unfrozen_model_refuses_prediction() {
        let m = Model::new(DomainSchema::synthetic_diffusion(), NetConfig::default(), 0).unwrap();
        assert!(matches!(m.predict(&diffusion_mesh(), &[], None), Err(Error::State(_))));
    }

    #[test]
    fn scripted_nodes_follow_script() {
        let schema = DomainSchema::synthetic_diffusion();
        let m = frozen(Model::new(schema, NetConfig { latent: 8, hidden_layers: 2, blocks: 1 }, 2).unwrap());
        let mesh = diffusion_mesh();
        let all_kinematic = SimMesh::new(
            2,
            0,
            1,
            mesh.mesh_pos_flat().to_vec(),
            vec![],
            vec![NodeType::Kinematic; 9],
            mesh.quantities_flat().to_vec(),
            mesh.cells().clone(),
        )
        .unwrap();
        let script: Vec<f64> = (0..9).map(|i| -(i as f64)).collect();
        let next = m.step(&all_kinematic, &[], Some(&script)).unwrap();
        assert_eq!(next.quantities_flat(), script.as_slice());
        // inputs are untouched and repeated calls agree bit for bit
        assert_eq!(m.step(&mesh, &[], None).unwrap(), m.step(&mesh, &[], None).unwrap());
        assert_eq!(mesh, diffusion_mesh());
    }

    #[test]
    fn targets_reintegrate_to_next_state() {
        let schema = DomainSchema {
            integrated: IntegratedField::Quantities { channels: vec![0] },
            ..DomainSchema::synthetic_diffusion()
        };
        let a = diffusion_mesh();
        let b = a.with_quantities(a.quantities_flat().iter().map(|v| v * v + 1.0).collect()).unwrap();
        let t = raw_targets(&schema, &a, None, &b, None).unwrap();
        let next = integrate(a.quantities_flat(), None, t.as_slice(), 1).unwrap();
        for (x, y) in next.iter().zip(b.quantities_flat()) {
            assert!((x - y).abs() < 1e-15);
        }
    }
}
