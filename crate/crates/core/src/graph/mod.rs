//! Multigraph construction and raw feature encoding.
//!
//! A directed edge `s -> r` carries features relative to its endpoints,
//! `u_s - u_r` and its norm, and is aggregated at its receiver `r`. Edge
//! lists are kept sorted by `(receiver, sender)` so that every sum over
//! incoming edges accumulates in a fixed order.

mod schema;
mod spatial;

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::mesh::{derive_edges, NodeType, SimMesh};
use crate::nn::Matrix;

pub use schema::{DomainSchema, IntegratedField, OutputLayout, SystemKind};
pub use spatial::radius_neighbors;

/// Directed edges with one feature row per edge.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeSet {
    pub senders: Vec<usize>,
    pub receivers: Vec<usize>,
    pub features: Matrix,
}

impl EdgeSet {
    /// Builds an edge set from `(sender, receiver)` pairs and matching
    /// feature rows, reordering both by `(receiver, sender)`.
    pub fn new(pairs: &[(usize, usize)], features: Matrix) -> EdgeSet {
        assert_eq!(pairs.len(), features.rows(), "one feature row per edge");
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.sort_by_key(|&e| (pairs[e].1, pairs[e].0));
        let mut sorted = Matrix::zeros(pairs.len(), features.cols());
        for (k, &e) in order.iter().enumerate() {
            sorted.row_mut(k).copy_from_slice(features.row(e));
        }
        EdgeSet {
            senders: order.iter().map(|&e| pairs[e].0).collect(),
            receivers: order.iter().map(|&e| pairs[e].1).collect(),
            features: sorted,
        }
    }

    pub fn empty(width: usize) -> EdgeSet {
        EdgeSet {
            senders: Vec::new(),
            receivers: Vec::new(),
            features: Matrix::zeros(0, width),
        }
    }

    pub fn len(&self) -> usize {
        self.senders.len()
    }

    pub fn is_empty(&self) -> bool {
        self.senders.is_empty()
    }
}

/// Encoded graph `G = (V, E^M, E^W)` with raw (unnormalized) features.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiGraph {
    pub node_features: Matrix,
    pub mesh_edges: EdgeSet,
    pub world_edges: EdgeSet,
}

impl MultiGraph {
    pub fn node_count(&self) -> usize {
        self.node_features.rows()
    }
}

/// Directed world edges: pairs closer than `radius` in world space that are
/// not joined by a mesh edge, both directions, sorted by `(i, j)`.
pub fn find_world_edges(mesh: &SimMesh, radius: f64) -> Result<Vec<(usize, usize)>> {
    if !mesh.is_lagrangian() {
        return Err(Error::Schema("world edges need world-space positions".into()));
    }
    if !(radius > 0.0) {
        return Err(Error::Schema(format!("world radius must be positive, got {radius}")));
    }
    let mesh_edges: HashSet<(usize, usize)> = derive_edges(mesh)?.into_iter().collect();
    let points: Vec<[f64; 3]> = (0..mesh.node_count()).map(|i| mesh.xyz(i)).collect();
    let mut out = Vec::new();
    for (i, j) in radius_neighbors(&points, radius) {
        if !mesh_edges.contains(&(i, j)) {
            out.push((i, j));
            out.push((j, i));
        }
    }
    out.sort_unstable();
    Ok(out)
}

fn push_relative(row: &mut Vec<f64>, a: &[f64], b: &[f64]) {
    let start = row.len();
    row.extend(a.iter().zip(b).map(|(x, y)| x - y));
    let norm = row[start..].iter().map(|v| v * v).sum::<f64>().sqrt();
    row.push(norm);
}

/// Encodes `current` (with `history[0]` the previous state, `history[1]` the
/// one before, ...) into a multigraph with raw features.
///
/// `scripted_next` holds next-step world positions (`dim_world` per node);
/// only scripted nodes' entries are read. It is required when the schema
/// feeds scripted velocities.
pub fn encode_features(
    current: &SimMesh,
    history: &[&SimMesh],
    schema: &DomainSchema,
    scripted_next: Option<&[f64]>,
) -> Result<MultiGraph> {
    schema.check_mesh(current)?;
    if history.len() != schema.history {
        return Err(Error::Schema(format!(
            "schema '{}' expects {} history states, got {}",
            schema.name,
            schema.history,
            history.len()
        )));
    }
    let n = current.node_count();
    for (k, h) in history.iter().enumerate() {
        schema.check_mesh(h)?;
        if h.node_count() != n {
            return Err(Error::Schema(format!(
                "history state {k} has {} nodes, current has {n}",
                h.node_count()
            )));
        }
    }
    let dw = schema.dim_world;
    if schema.scripted_velocity {
        match scripted_next {
            Some(s) if s.len() == n * dw => {}
            Some(s) => {
                return Err(Error::Dimension(format!(
                    "scripted positions have {} values, expected {}",
                    s.len(),
                    n * dw
                )))
            }
            None => return Err(Error::Schema("schema needs scripted next-step positions".into())),
        }
    }

    // node features
    let iw = schema.integrated_width();
    let mut states = vec![schema.integrated_values(current)];
    states.extend(history.iter().map(|h| schema.integrated_values(h)));
    let width = schema.node_feature_width();
    let mut node_features = Matrix::zeros(n, width);
    for i in 0..n {
        let row = node_features.row_mut(i);
        row[..NodeType::COUNT].copy_from_slice(&current.node_type(i).one_hot());
        let mut c = NodeType::COUNT;
        for k in 0..schema.history {
            for d in 0..iw {
                row[c] = states[k][i * iw + d] - states[k + 1][i * iw + d];
                c += 1;
            }
        }
        let q = current.quantity(i);
        for &ch in &schema.input_quantities {
            row[c] = q[ch];
            c += 1;
        }
        if schema.scripted_velocity {
            if current.node_type(i).is_scripted() {
                let next = &scripted_next.expect("checked above")[i * dw..(i + 1) * dw];
                for (d, &x) in next.iter().enumerate() {
                    row[c + d] = x - current.world_pos(i)[d];
                }
            }
            c += dw;
        }
        debug_assert_eq!(c, width);
    }

    // mesh edges, both directions
    let lagrangian = schema.kind == SystemKind::Lagrangian;
    let undirected = derive_edges(current)?;
    let mut pairs = Vec::with_capacity(2 * undirected.len());
    let mut feats = Vec::with_capacity(2 * undirected.len() * schema.mesh_edge_width());
    for &(a, b) in &undirected {
        for (s, r) in [(a, b), (b, a)] {
            pairs.push((s, r));
            push_relative(&mut feats, current.mesh_pos(s), current.mesh_pos(r));
            if lagrangian {
                push_relative(&mut feats, current.world_pos(s), current.world_pos(r));
            }
        }
    }
    let mesh_edges = EdgeSet::new(
        &pairs,
        Matrix::from_vec(pairs.len(), schema.mesh_edge_width(), feats),
    );

    let world_edges = if schema.uses_world_edges() {
        let pairs = find_world_edges(current, schema.world_radius)?;
        let mut feats = Vec::with_capacity(pairs.len() * schema.world_edge_width());
        for &(s, r) in &pairs {
            push_relative(&mut feats, current.world_pos(s), current.world_pos(r));
        }
        EdgeSet::new(
            &pairs,
            Matrix::from_vec(pairs.len(), schema.world_edge_width(), feats),
        )
    } else {
        EdgeSet::empty(schema.world_edge_width())
    };

    Ok(MultiGraph {
        node_features,
        mesh_edges,
        world_edges,
    })
}
