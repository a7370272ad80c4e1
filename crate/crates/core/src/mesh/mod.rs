//! Simulation meshes: node records, cell connectivity, validation and edge
//! derivation.
//!
//! A [`SimMesh`] stores nodes in structure-of-arrays form. Mesh-space
//! coordinates (`mesh_pos`) span the reference domain, world-space
//! coordinates (`world_pos`) are present only for Lagrangian systems
//! (`dim_world == 3`), and every node carries a fixed-length vector of
//! dynamical quantities.

mod io;
mod locate;

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{read_mesh_json, write_mesh_json, write_obj, MeshJson};
pub use locate::{barycentric_transfer, transfer_state, PointLocator, TAU_BARY};

/// Node category. Its one-hot encoding is part of every node feature vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum NodeType {
    Normal,
    Kinematic,
    Obstacle,
    Inflow,
    Outflow,
    Wall,
}

impl NodeType {
    /// Length of the one-hot node type vector.
    pub const COUNT: usize = 6;

    pub const ALL: [NodeType; 6] = [
        NodeType::Normal,
        NodeType::Kinematic,
        NodeType::Obstacle,
        NodeType::Inflow,
        NodeType::Outflow,
        NodeType::Wall,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<NodeType> {
        Self::ALL.get(index).copied()
    }

    /// Nodes whose next state is prescribed rather than predicted.
    pub fn is_scripted(self) -> bool {
        matches!(self, NodeType::Kinematic | NodeType::Obstacle)
    }

    pub fn one_hot(self) -> [f64; Self::COUNT] {
        let mut v = [0.0; Self::COUNT];
        v[self.index()] = 1.0;
        v
    }
}

/// Cell connectivity: triangles for 2D and surface meshes, tetrahedra for
/// volumetric meshes.
#[derive(Clone, Debug, PartialEq)]
pub enum Cells {
    Triangles(Vec<[usize; 3]>),
    Tetrahedra(Vec<[usize; 4]>),
}

impl Cells {
    pub fn len(&self) -> usize {
        match self {
            Cells::Triangles(t) => t.len(),
            Cells::Tetrahedra(t) => t.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell(&self, c: usize) -> &[usize] {
        match self {
            Cells::Triangles(t) => &t[c],
            Cells::Tetrahedra(t) => &t[c],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &[usize]> + '_ {
        (0..self.len()).map(move |c| self.cell(c))
    }

    pub fn triangles(&self) -> Option<&[[usize; 3]]> {
        match self {
            Cells::Triangles(t) => Some(t),
            Cells::Tetrahedra(_) => None,
        }
    }
}

/// Owned view of a single node, used to build meshes record by record.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeRecord {
    pub mesh_pos: Vec<f64>,
    pub world_pos: Vec<f64>,
    pub node_type: NodeType,
    pub quantities: Vec<f64>,
}

/// Simulation mesh state `M^t`.
#[derive(Clone, Debug, PartialEq)]
pub struct SimMesh {
    dim_mesh: usize,
    dim_world: usize,
    n_quantities: usize,
    mesh_pos: Vec<f64>,
    world_pos: Vec<f64>,
    node_type: Vec<NodeType>,
    quantities: Vec<f64>,
    cells: Cells,
}

impl SimMesh {
    /// Builds a mesh from flat per-node arrays. Checks array lengths only;
    /// call [`validate`] for topological checks.
    pub fn new(
        dim_mesh: usize,
        dim_world: usize,
        n_quantities: usize,
        mesh_pos: Vec<f64>,
        world_pos: Vec<f64>,
        node_type: Vec<NodeType>,
        quantities: Vec<f64>,
        cells: Cells,
    ) -> Result<SimMesh> {
        if !(dim_mesh == 2 || dim_mesh == 3) {
            return Err(Error::Dimension(format!("dim_mesh must be 2 or 3, got {dim_mesh}")));
        }
        if !(dim_world == 0 || dim_world == 3) {
            return Err(Error::Dimension(format!("dim_world must be 0 or 3, got {dim_world}")));
        }
        let n = node_type.len();
        if mesh_pos.len() != n * dim_mesh {
            return Err(Error::Dimension(format!(
                "mesh_pos has {} values, expected {}",
                mesh_pos.len(),
                n * dim_mesh
            )));
        }
        if world_pos.len() != n * dim_world {
            return Err(Error::Dimension(format!(
                "world_pos has {} values, expected {}",
                world_pos.len(),
                n * dim_world
            )));
        }
        if quantities.len() != n * n_quantities {
            return Err(Error::Dimension(format!(
                "quantities has {} values, expected {}",
                quantities.len(),
                n * n_quantities
            )));
        }
        Ok(SimMesh {
            dim_mesh,
            dim_world,
            n_quantities,
            mesh_pos,
            world_pos,
            node_type,
            quantities,
            cells,
        })
    }

    pub fn from_records(
        dim_mesh: usize,
        dim_world: usize,
        n_quantities: usize,
        records: &[NodeRecord],
        cells: Cells,
    ) -> Result<SimMesh> {
        let mut mesh_pos = Vec::with_capacity(records.len() * dim_mesh);
        let mut world_pos = Vec::with_capacity(records.len() * dim_world);
        let mut quantities = Vec::with_capacity(records.len() * n_quantities);
        let mut node_type = Vec::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if r.mesh_pos.len() != dim_mesh
                || r.world_pos.len() != dim_world
                || r.quantities.len() != n_quantities
            {
                return Err(Error::Dimension(format!("node {i} record has wrong field lengths")));
            }
            mesh_pos.extend_from_slice(&r.mesh_pos);
            world_pos.extend_from_slice(&r.world_pos);
            quantities.extend_from_slice(&r.quantities);
            node_type.push(r.node_type);
        }
        SimMesh::new(
            dim_mesh,
            dim_world,
            n_quantities,
            mesh_pos,
            world_pos,
            node_type,
            quantities,
            cells,
        )
    }

    pub fn node_count(&self) -> usize {
        self.node_type.len()
    }

    pub fn dim_mesh(&self) -> usize {
        self.dim_mesh
    }

    pub fn dim_world(&self) -> usize {
        self.dim_world
    }

    pub fn n_quantities(&self) -> usize {
        self.n_quantities
    }

    pub fn is_lagrangian(&self) -> bool {
        self.dim_world > 0
    }

    pub fn cells(&self) -> &Cells {
        &self.cells
    }

    pub fn node_types(&self) -> &[NodeType] {
        &self.node_type
    }

    pub fn node_type(&self, i: usize) -> NodeType {
        self.node_type[i]
    }

    pub fn mesh_pos(&self, i: usize) -> &[f64] {
        &self.mesh_pos[i * self.dim_mesh..(i + 1) * self.dim_mesh]
    }

    pub fn world_pos(&self, i: usize) -> &[f64] {
        &self.world_pos[i * self.dim_world..(i + 1) * self.dim_world]
    }

    pub fn quantity(&self, i: usize) -> &[f64] {
        &self.quantities[i * self.n_quantities..(i + 1) * self.n_quantities]
    }

    pub fn mesh_pos_flat(&self) -> &[f64] {
        &self.mesh_pos
    }

    pub fn world_pos_flat(&self) -> &[f64] {
        &self.world_pos
    }

    pub fn quantities_flat(&self) -> &[f64] {
        &self.quantities
    }

    /// Mesh-space position as a 2D point. Panics unless `dim_mesh == 2`.
    pub fn uv(&self, i: usize) -> [f64; 2] {
        assert_eq!(self.dim_mesh, 2);
        [self.mesh_pos[2 * i], self.mesh_pos[2 * i + 1]]
    }

    /// World-space position as a 3D point. Panics unless `dim_world == 3`.
    pub fn xyz(&self, i: usize) -> [f64; 3] {
        assert_eq!(self.dim_world, 3);
        [self.world_pos[3 * i], self.world_pos[3 * i + 1], self.world_pos[3 * i + 2]]
    }

    pub fn node(&self, i: usize) -> NodeRecord {
        NodeRecord {
            mesh_pos: self.mesh_pos(i).to_vec(),
            world_pos: self.world_pos(i).to_vec(),
            node_type: self.node_type[i],
            quantities: self.quantity(i).to_vec(),
        }
    }

    /// Copy of this mesh with replaced world positions.
    pub fn with_world_pos(&self, world_pos: Vec<f64>) -> Result<SimMesh> {
        if world_pos.len() != self.world_pos.len() {
            return Err(Error::Dimension(format!(
                "world_pos has {} values, expected {}",
                world_pos.len(),
                self.world_pos.len()
            )));
        }
        Ok(SimMesh {
            world_pos,
            ..self.clone()
        })
    }

    /// Copy of this mesh with replaced quantities.
    pub fn with_quantities(&self, quantities: Vec<f64>) -> Result<SimMesh> {
        if quantities.len() != self.quantities.len() {
            return Err(Error::Dimension(format!(
                "quantities has {} values, expected {}",
                quantities.len(),
                self.quantities.len()
            )));
        }
        Ok(SimMesh {
            quantities,
            ..self.clone()
        })
    }

    /// Mean length of the derived mesh edges in mesh space.
    pub fn mean_edge_length(&self) -> f64 {
        let edges = match derive_edges(self) {
            Ok(e) if !e.is_empty() => e,
            _ => return 0.0,
        };
        let total: f64 = edges
            .iter()
            .map(|&(i, j)| dist(self.mesh_pos(i), self.mesh_pos(j)))
            .sum();
        total / edges.len() as f64
    }
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// A single invariant violation found by [`validate`].
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    IndexOutOfRange { cell: usize, index: usize, node_count: usize },
    RepeatedNode { cell: usize },
    ZeroMeasure { cell: usize },
    DuplicateCell { cell: usize, first: usize },
    CellArity { cell: usize },
    NonFinite { node: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::IndexOutOfRange {
                cell,
                index,
                node_count,
            } => write!(f, "cell {cell} references node {index} (node count {node_count})"),
            Violation::RepeatedNode { cell } => write!(f, "cell {cell} repeats a node index"),
            Violation::ZeroMeasure { cell } => write!(f, "cell {cell} has zero mesh-space measure"),
            Violation::DuplicateCell { cell, first } => {
                write!(f, "cell {cell} duplicates cell {first}")
            }
            Violation::CellArity { cell } => {
                write!(f, "cell {cell} has the wrong number of nodes for this mesh")
            }
            Violation::NonFinite { node } => write!(f, "node {node} has a non-finite value"),
        }
    }
}

/// Signed mesh-space area of triangle `(a, b, c)`; positive when
/// counter-clockwise.
pub fn signed_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
}

fn cell_measure(mesh: &SimMesh, cell: &[usize]) -> f64 {
    let d = mesh.dim_mesh;
    let p = |i: usize| -> [f64; 3] {
        let s = mesh.mesh_pos(i);
        [s[0], s[1], if d == 3 { s[2] } else { 0.0 }]
    };
    let sub = |a: [f64; 3], b: [f64; 3]| [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    let cross = |a: [f64; 3], b: [f64; 3]| {
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    };
    match cell.len() {
        3 if d == 2 => signed_area(mesh.uv(cell[0]), mesh.uv(cell[1]), mesh.uv(cell[2])),
        3 => {
            let n = cross(sub(p(cell[1]), p(cell[0])), sub(p(cell[2]), p(cell[0])));
            0.5 * (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt()
        }
        4 => {
            let o = p(cell[0]);
            let n = cross(sub(p(cell[1]), o), sub(p(cell[2]), o));
            let w = sub(p(cell[3]), o);
            (n[0] * w[0] + n[1] * w[1] + n[2] * w[2]) / 6.0
        }
        _ => 0.0,
    }
}

/// Checks every [`SimMesh`] invariant and reports all violations. An empty
/// list means the mesh is well formed.
pub fn validate(mesh: &SimMesh) -> Vec<Violation> {
    let n = mesh.node_count();
    let mut out = Vec::new();
    for i in 0..n {
        let finite = mesh.mesh_pos(i).iter().all(|v| v.is_finite())
            && mesh.world_pos(i).iter().all(|v| v.is_finite())
            && mesh.quantity(i).iter().all(|v| v.is_finite());
        if !finite {
            out.push(Violation::NonFinite { node: i });
        }
    }
    let arity_ok = |len: usize| match mesh.cells {
        Cells::Triangles(_) => len == 3,
        Cells::Tetrahedra(_) => len == 4 && mesh.dim_mesh == 3,
    };
    let mut seen: std::collections::HashMap<Vec<usize>, usize> = std::collections::HashMap::new();
    for (c, cell) in mesh.cells.iter().enumerate() {
        if !arity_ok(cell.len()) {
            out.push(Violation::CellArity { cell: c });
            continue;
        }
        let mut in_range = true;
        for &index in cell {
            if index >= n {
                out.push(Violation::IndexOutOfRange {
                    cell: c,
                    index,
                    node_count: n,
                });
                in_range = false;
            }
        }
        let distinct: HashSet<usize> = cell.iter().copied().collect();
        if distinct.len() != cell.len() {
            out.push(Violation::RepeatedNode { cell: c });
            continue;
        }
        if !in_range {
            continue;
        }
        if cell_measure(mesh, cell) == 0.0 {
            out.push(Violation::ZeroMeasure { cell: c });
        }
        let mut key = cell.to_vec();
        key.sort_unstable();
        if let Some(&first) = seen.get(&key) {
            out.push(Violation::DuplicateCell { cell: c, first });
        } else {
            seen.insert(key, c);
        }
    }
    out
}

/// Like [`validate`], but converts violations into an error.
pub fn ensure_valid(mesh: &SimMesh) -> Result<()> {
    let v = validate(mesh);
    if v.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(v.iter().map(|v| v.to_string()).collect()))
    }
}

/// Undirected mesh edges `(i, j)`, `i < j`, sorted and unique.
pub fn derive_edges(mesh: &SimMesh) -> Result<Vec<(usize, usize)>> {
    let n = mesh.node_count();
    let mut edges = Vec::with_capacity(mesh.cells.len() * 3);
    for (c, cell) in mesh.cells.iter().enumerate() {
        for &index in cell {
            if index >= n {
                return Err(Error::Validation(vec![Violation::IndexOutOfRange {
                    cell: c,
                    index,
                    node_count: n,
                }
                .to_string()]));
            }
        }
        for a in 0..cell.len() {
            for b in a + 1..cell.len() {
                let (i, j) = (cell[a], cell[b]);
                if i != j {
                    edges.push((i.min(j), i.max(j)));
                }
            }
        }
    }
    edges.sort_unstable();
    edges.dedup();
    Ok(edges)
}

/// Per-node sorted neighbour lists derived from the edge set.
pub fn neighbors(mesh: &SimMesh) -> Result<Vec<Vec<usize>>> {
    let mut adj = vec![Vec::new(); mesh.node_count()];
    for (i, j) in derive_edges(mesh)? {
        adj[i].push(j);
        adj[j].push(i);
    }
    for a in &mut adj {
        a.sort_unstable();
    }
    Ok(adj)
}

/// Regular `nx × ny` grid of nodes over `[0, width] × [0, height]` in mesh
/// space, each quad split into two counter-clockwise triangles.
pub fn grid_triangles(nx: usize, ny: usize, width: f64, height: f64) -> (Vec<f64>, Vec<[usize; 3]>) {
    let mut uv = Vec::with_capacity(nx * ny * 2);
    for j in 0..ny {
        for i in 0..nx {
            uv.push(width * i as f64 / (nx - 1) as f64);
            uv.push(height * j as f64 / (ny - 1) as f64);
        }
    }
    let mut tris = Vec::with_capacity(2 * (nx - 1) * (ny - 1));
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            let a = j * nx + i;
            let b = a + 1;
            let c = a + nx;
            let d = c + 1;
            if (i + j) % 2 == 0 {
                tris.push([a, b, d]);
                tris.push([a, d, c]);
            } else {
                tris.push([a, b, c]);
                tris.push([b, d, c]);
            }
        }
    }
    (uv, tris)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(uv: Vec<f64>, tris: Vec<[usize; 3]>) -> SimMesh {
        let n = uv.len() / 2;
        SimMesh::new(2, 0, 0, uv, vec![], vec![NodeType::Normal; n], vec![], Cells::Triangles(tris))
            .unwrap()
    }

    #[test]
    fn single_triangle_edges() {
        let m = flat(vec![0., 0., 1., 0., 0., 1.], vec![[0, 1, 2]]);
        assert_eq!(derive_edges(&m).unwrap(), vec![(0, 1), (0, 2), (1, 2)]);
    }

    #[test]
    fn shared_edge_is_not_duplicated() {
        let m = flat(vec![0., 0., 1., 0., 0., 1., 1., 1.], vec![[0, 1, 2], [1, 3, 2]]);
        let e = derive_edges(&m).unwrap();
        assert_eq!(e.len(), 5);
        assert_eq!(e.iter().filter(|&&p| p == (1, 2)).count(), 1);
    }

    #[test]
    fn empty_cells_give_no_edges() {
        let m = flat(vec![0., 0.], vec![]);
        assert!(derive_edges(&m).unwrap().is_empty());
    }

    #[test]
    fn derive_edges_rejects_bad_index() {
        let m = flat(vec![0., 0., 1., 0., 0., 1.], vec![[0, 1, 5]]);
        assert!(matches!(derive_edges(&m), Err(Error::Validation(_))));
    }

    #[test]
    fn validate_reports_degenerate_cell() {
        let m = flat(vec![0., 0., 1., 0., 0., 1.], vec![[0, 1, 1]]);
        assert_eq!(validate(&m), vec![Violation::RepeatedNode { cell: 0 }]);
    }

    #[test]
    fn validate_reports_out_of_range() {
        let m = flat(vec![0., 0., 1., 0., 0., 1.], vec![[0, 1, 5]]);
        assert_eq!(
            validate(&m),
            vec![Violation::IndexOutOfRange {
                cell: 0,
                index: 5,
                node_count: 3
            }]
        );
    }

    #[test]
    fn validate_accepts_unit_square() {
        let m = flat(vec![0., 0., 1., 0., 0., 1., 1., 1.], vec![[0, 1, 3], [0, 3, 2]]);
        assert!(validate(&m).is_empty());
    }

    #[test]
    fn validate_reports_zero_area_and_duplicates() {
        let m = flat(
            vec![0., 0., 1., 0., 2., 0., 0., 1.],
            vec![[0, 1, 2], [0, 1, 3], [3, 1, 0]],
        );
        let v = validate(&m);
        assert!(v.contains(&Violation::ZeroMeasure { cell: 0 }));
        assert!(v.contains(&Violation::DuplicateCell { cell: 2, first: 1 }));
    }

    #[test]
    fn tetrahedron_volume_checked() {
        let m = SimMesh::new(
            3,
            0,
            0,
            vec![0., 0., 0., 1., 0., 0., 0., 1., 0., 1., 1., 0.],
            vec![],
            vec![NodeType::Normal; 4],
            vec![],
            Cells::Tetrahedra(vec![[0, 1, 2, 3]]),
        )
        .unwrap();
        assert_eq!(validate(&m), vec![Violation::ZeroMeasure { cell: 0 }]);
        assert_eq!(derive_edges(&m).unwrap().len(), 6);
    }

    #[test]
    fn grid_is_valid_and_ccw() {
        let (uv, tris) = grid_triangles(4, 3, 3.0, 2.0);
        let m = flat(uv, tris.clone());
        assert!(validate(&m).is_empty());
        for t in tris {
            assert!(signed_area(m.uv(t[0]), m.uv(t[1]), m.uv(t[2])) > 0.0);
        }
        // 3x2 quads: horizontal 3*3, vertical 4*2, diagonals 6
        assert_eq!(derive_edges(&m).unwrap().len(), 9 + 8 + 6);
    }

    #[test]
    fn constructor_checks_lengths() {
        let r = SimMesh::new(2, 3, 0, vec![0.; 4], vec![0.; 3], vec![NodeType::Normal; 2], vec![], Cells::Triangles(vec![]));
        assert!(matches!(r, Err(Error::Dimension(_))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn edges_independent_of_cell_order(seed in 0u64..1000, nx in 2usize..6, ny in 2usize..6) {
                let (uv, mut tris) = grid_triangles(nx, ny, 1.0, 1.0);
                let a = derive_edges(&flat(uv.clone(), tris.clone())).unwrap();
                // deterministic permutation
                let k = tris.len();
                for i in 0..k {
                    let j = ((seed as usize).wrapping_mul(2654435761).wrapping_add(i * 40503)) % k;
                    tris.swap(i, j);
                }
                let m = flat(uv, tris);
                let b = derive_edges(&m).unwrap();
                prop_assert_eq!(&a, &b);
                // idempotent
                prop_assert_eq!(b, derive_edges(&m).unwrap());
            }
        }
    }
}
