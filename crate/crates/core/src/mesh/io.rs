use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Cells, NodeType, SimMesh};
use crate::error::{Error, Result};

/// On-disk JSON layout of a [`SimMesh`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MeshJson {
    pub dim_mesh: usize,
    pub dim_world: usize,
    pub node_type: Vec<usize>,
    pub mesh_pos: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub world_pos: Option<Vec<Vec<f64>>>,
    pub quantities: Vec<Vec<f64>>,
    pub cells: Vec<Vec<usize>>,
}

impl From<&SimMesh> for MeshJson {
    fn from(m: &SimMesh) -> Self {
        let n = m.node_count();
        MeshJson {
            dim_mesh: m.dim_mesh(),
            dim_world: m.dim_world(),
            node_type: m.node_types().iter().map(|t| t.index()).collect(),
            mesh_pos: (0..n).map(|i| m.mesh_pos(i).to_vec()).collect(),
            world_pos: m
                .is_lagrangian()
                .then(|| (0..n).map(|i| m.world_pos(i).to_vec()).collect()),
            quantities: (0..n).map(|i| m.quantity(i).to_vec()).collect(),
            cells: m.cells().iter().map(|c| c.to_vec()).collect(),
        }
    }
}

impl MeshJson {
    pub fn into_mesh(self) -> std::result::Result<SimMesh, String> {
        let n = self.node_type.len();
        let node_type = self
            .node_type
            .iter()
            .map(|&t| NodeType::from_index(t).ok_or_else(|| format!("unknown node type {t}")))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        if self.mesh_pos.len() != n || self.quantities.len() != n {
            return Err("per-node arrays have inconsistent lengths".into());
        }
        let n_quantities = self.quantities.first().map_or(0, |q| q.len());
        if self.quantities.iter().any(|q| q.len() != n_quantities) {
            return Err("quantities rows have differing lengths".into());
        }
        if self.mesh_pos.iter().any(|p| p.len() != self.dim_mesh) {
            return Err("mesh_pos rows do not match dim_mesh".into());
        }
        let world_pos = match (self.dim_world, self.world_pos) {
            (0, None) => Vec::new(),
            (0, Some(w)) if w.iter().all(|r| r.is_empty()) => Vec::new(),
            (d, Some(w)) if w.len() == n && w.iter().all(|r| r.len() == d) => w.concat(),
            _ => return Err("world_pos does not match dim_world".into()),
        };
        let arity = self.cells.first().map_or(3, |c| c.len());
        if self.cells.iter().any(|c| c.len() != arity) {
            return Err("cells have mixed arity".into());
        }
        let cells = match arity {
            3 => Cells::Triangles(self.cells.iter().map(|c| [c[0], c[1], c[2]]).collect()),
            4 => Cells::Tetrahedra(self.cells.iter().map(|c| [c[0], c[1], c[2], c[3]]).collect()),
            a => return Err(format!("unsupported cell arity {a}")),
        };
        SimMesh::new(
            self.dim_mesh,
            self.dim_world,
            n_quantities,
            self.mesh_pos.concat(),
            world_pos,
            node_type,
            self.quantities.concat(),
            cells,
        )
        .map_err(|e| e.to_string())
    }
}

pub fn read_mesh_json(path: impl AsRef<Path>) -> Result<SimMesh> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let json: MeshJson =
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    json.into_mesh().map_err(|m| Error::format(path, m))
}

pub fn write_mesh_json(path: impl AsRef<Path>, mesh: &SimMesh) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string(&MeshJson::from(mesh))
        .map_err(|e| Error::format(path, e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes world positions (mesh positions padded to 3D for Eulerian meshes)
/// and triangle faces as Wavefront OBJ.
pub fn write_obj(path: impl AsRef<Path>, mesh: &SimMesh) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for i in 0..mesh.node_count() {
        let p: [f64; 3] = if mesh.is_lagrangian() {
            mesh.xyz(i)
        } else {
            let u = mesh.mesh_pos(i);
            [u[0], u[1], u.get(2).copied().unwrap_or(0.0)]
        };
        writeln!(out, "v {} {} {}", p[0], p[1], p[2]).expect("write to Vec");
    }
    if let Some(tris) = mesh.cells().triangles() {
        for t in tris {
            writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1).expect("write to Vec");
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
