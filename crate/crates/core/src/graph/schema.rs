use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{NodeType, SimMesh};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemKind {
    /// The mesh moves with the material; world coordinates are the state.
    Lagrangian,
    /// Fields evolve on a fixed mesh.
    Eulerian,
}

/// Which per-node values the decoder's derivative outputs integrate into.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "field", rename_all = "snake_case")]
pub enum IntegratedField {
    WorldPos,
    Quantities { channels: Vec<usize> },
}

/// Feature and output layout of one simulation domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSchema {
    pub name: String,
    pub kind: SystemKind,
    pub dim_mesh: usize,
    pub dim_world: usize,
    pub n_quantities: usize,
    /// Number of previous states fed to the model.
    pub history: usize,
    /// World-edge radius in world units; zero disables world edges.
    pub world_radius: f64,
    /// 1: outputs are first derivatives; 2: second derivatives.
    pub order: u8,
    pub integrated: IntegratedField,
    /// Quantity channels appended to node features.
    pub input_quantities: Vec<usize>,
    /// Quantity channels predicted directly (pressure, stress).
    pub direct_outputs: Vec<usize>,
    /// Feed the next-step world velocity of scripted nodes as input.
    pub scripted_velocity: bool,
    /// Append three sizing-tensor channels `(s11, s12, s22)` to the output.
    pub sizing_head: bool,
    /// Training noise standard deviation per integrated channel.
    pub noise: Vec<f64>,
    /// Simulation time step of one model step.
    pub dt: f64,
}

/// Column ranges of the decoder output vector.
#[derive(Clone, Debug, PartialEq)]
pub struct OutputLayout {
    pub integrated: Range<usize>,
    pub direct: Range<usize>,
    pub sizing: Option<Range<usize>>,
    pub width: usize,
}

impl DomainSchema {
    pub fn integrated_width(&self) -> usize {
        match &self.integrated {
            IntegratedField::WorldPos => self.dim_world,
            IntegratedField::Quantities { channels } => channels.len(),
        }
    }

    pub fn output_layout(&self) -> OutputLayout {
        let i = self.integrated_width();
        let d = self.direct_outputs.len();
        let sizing = self.sizing_head.then(|| i + d..i + d + 3);
        let width = i + d + if self.sizing_head { 3 } else { 0 };
        OutputLayout {
            integrated: 0..i,
            direct: i..i + d,
            sizing,
            width,
        }
    }

    pub fn output_width(&self) -> usize {
        self.output_layout().width
    }

    pub fn node_feature_width(&self) -> usize {
        NodeType::COUNT
            + self.history * self.integrated_width()
            + self.input_quantities.len()
            + if self.scripted_velocity { self.dim_world } else { 0 }
    }

    pub fn mesh_edge_width(&self) -> usize {
        self.dim_mesh + 1 + if self.kind == SystemKind::Lagrangian { self.dim_world + 1 } else { 0 }
    }

    pub fn world_edge_width(&self) -> usize {
        self.dim_world.max(3) + 1
    }

    pub fn uses_world_edges(&self) -> bool {
        self.kind == SystemKind::Lagrangian && self.world_radius > 0.0
    }

    /// Checks the internal consistency of the layout.
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Schema(m));
        if !(self.dim_mesh == 2 || self.dim_mesh == 3) {
            return err(format!("dim_mesh {} not in {{2, 3}}", self.dim_mesh));
        }
        match self.kind {
            SystemKind::Lagrangian if self.dim_world != 3 => {
                return err("Lagrangian systems need dim_world = 3".into())
            }
            SystemKind::Eulerian if self.dim_world != 0 => {
                return err("Eulerian systems need dim_world = 0".into())
            }
            _ => {}
        }
        if self.kind == SystemKind::Eulerian
            && matches!(self.integrated, IntegratedField::WorldPos)
        {
            return err("Eulerian systems cannot integrate world positions".into());
        }
        if !(self.order == 1 || self.order == 2) {
            return err(format!("integration order {} not in {{1, 2}}", self.order));
        }
        if self.order == 2 && self.history < 1 {
            return err("second-order integration needs at least one history state".into());
        }
        if !(self.world_radius >= 0.0) {
            return err("world_radius must be nonnegative".into());
        }
        if self.noise.len() != self.integrated_width() {
            return err(format!(
                "noise has {} entries for {} integrated channels",
                self.noise.len(),
                self.integrated_width()
            ));
        }
        let mut used = std::collections::HashSet::new();
        if let IntegratedField::Quantities { channels } = &self.integrated {
            for &c in channels {
                if c >= self.n_quantities || !used.insert(c) {
                    return err(format!("integrated channel {c} is out of range or repeated"));
                }
            }
        }
        for &c in &self.direct_outputs {
            if c >= self.n_quantities || !used.insert(c) {
                return err(format!("direct output channel {c} is out of range or overlaps"));
            }
        }
        for &c in &self.input_quantities {
            if c >= self.n_quantities {
                return err(format!("input channel {c} is out of range"));
            }
        }
        if self.scripted_velocity && !matches!(self.integrated, IntegratedField::WorldPos) {
            return err("scripted velocities need integrated world positions".into());
        }
        if self.sizing_head && self.dim_mesh != 2 {
            return err("sizing heads need a 2D mesh space".into());
        }
        Ok(())
    }

    /// Checks that a mesh matches this schema's dimensions.
    pub fn check_mesh(&self, mesh: &SimMesh) -> Result<()> {
        if mesh.dim_mesh() != self.dim_mesh
            || mesh.dim_world() != self.dim_world
            || mesh.n_quantities() != self.n_quantities
        {
            return Err(Error::Schema(format!(
                "mesh dims (mesh {}, world {}, quantities {}) do not match schema '{}' ({}, {}, {})",
                mesh.dim_mesh(),
                mesh.dim_world(),
                mesh.n_quantities(),
                self.name,
                self.dim_mesh,
                self.dim_world,
                self.n_quantities
            )));
        }
        Ok(())
    }

    /// Values of the integrated field, `integrated_width()` per node.
    pub fn integrated_values(&self, mesh: &SimMesh) -> Vec<f64> {
        match &self.integrated {
            IntegratedField::WorldPos => mesh.world_pos_flat().to_vec(),
            IntegratedField::Quantities { channels } => {
                let mut out = Vec::with_capacity(mesh.node_count() * channels.len());
                for i in 0..mesh.node_count() {
                    let q = mesh.quantity(i);
                    out.extend(channels.iter().map(|&c| q[c]));
                }
                out
            }
        }
    }

    /// Copy of `mesh` with the integrated field replaced.
    pub fn with_integrated(&self, mesh: &SimMesh, values: &[f64]) -> Result<SimMesh> {
        match &self.integrated {
            IntegratedField::WorldPos => mesh.with_world_pos(values.to_vec()),
            IntegratedField::Quantities { channels } => {
                let w = channels.len();
                let mut q = mesh.quantities_flat().to_vec();
                let nq = mesh.n_quantities();
                for i in 0..mesh.node_count() {
                    for (k, &c) in channels.iter().enumerate() {
                        q[i * nq + c] = values[i * w + k];
                    }
                }
                mesh.with_quantities(q)
            }
        }
    }

    fn lagrangian(name: &str, n_quantities: usize, history: usize, order: u8) -> DomainSchema {
        DomainSchema {
            name: name.into(),
            kind: SystemKind::Lagrangian,
            dim_mesh: 2,
            dim_world: 3,
            n_quantities,
            history,
            world_radius: 0.0,
            order,
            integrated: IntegratedField::WorldPos,
            input_quantities: vec![],
            direct_outputs: vec![],
            scripted_velocity: false,
            sizing_head: false,
            noise: vec![1e-3; 3],
            dt: 0.02,
        }
    }

    fn eulerian(name: &str, n_quantities: usize, integrated: Vec<usize>, noise: Vec<f64>) -> DomainSchema {
        DomainSchema {
            name: name.into(),
            kind: SystemKind::Eulerian,
            dim_mesh: 2,
            dim_world: 0,
            n_quantities,
            history: 0,
            world_radius: 0.0,
            order: 1,
            input_quantities: integrated.clone(),
            integrated: IntegratedField::Quantities { channels: integrated },
            direct_outputs: vec![],
            scripted_velocity: false,
            sizing_head: false,
            noise,
            dt: 0.01,
        }
    }

    /// Regularly meshed flag (cloth, second order, one history step).
    pub fn flag_simple() -> DomainSchema {
        DomainSchema::lagrangian("flag_simple", 0, 1, 2)
    }

    /// Dynamically remeshed flag with a sizing head.
    pub fn flag_dynamic() -> DomainSchema {
        DomainSchema {
            world_radius: 0.05,
            sizing_head: true,
            noise: vec![3e-3; 3],
            ..DomainSchema::lagrangian("flag_dynamic", 0, 1, 2)
        }
    }

    /// Cloth falling onto a scripted sphere, dynamically remeshed.
    pub fn sphere_dynamic() -> DomainSchema {
        DomainSchema {
            world_radius: 0.05,
            sizing_head: true,
            scripted_velocity: true,
            dt: 0.01,
            ..DomainSchema::lagrangian("sphere_dynamic", 0, 1, 2)
        }
    }

    /// Hyper-elastic plate on tetrahedra: velocity plus direct stress output.
    pub fn deforming_plate() -> DomainSchema {
        DomainSchema {
            dim_mesh: 3,
            world_radius: 0.03,
            direct_outputs: vec![0],
            scripted_velocity: true,
            noise: vec![3e-3; 3],
            ..DomainSchema::lagrangian("deforming_plate", 1, 0, 1)
        }
    }

    /// Incompressible flow: momentum `(w_x, w_y)` integrated, pressure direct.
    pub fn cylinder_flow() -> DomainSchema {
        DomainSchema {
            direct_outputs: vec![2],
            ..DomainSchema::eulerian("cylinder_flow", 3, vec![0, 1], vec![2e-2; 2])
        }
    }

    /// Compressible flow: momentum and density integrated, pressure direct.
    pub fn airfoil() -> DomainSchema {
        DomainSchema {
            direct_outputs: vec![3],
            dt: 0.008,
            ..DomainSchema::eulerian("airfoil", 4, vec![0, 1, 2], vec![1e1, 1e1, 1e-2])
        }
    }

    /// Built-in mass-spring cloth. Quantities hold the solver velocity,
    /// which is not a model input.
    pub fn synthetic_cloth(mean_edge: f64) -> DomainSchema {
        DomainSchema {
            world_radius: 0.5 * mean_edge,
            noise: vec![1e-3 * mean_edge; 3],
            ..DomainSchema::lagrangian("cloth-spring", 3, 1, 2)
        }
    }

    /// Built-in remeshed cloth with a sizing head.
    pub fn synthetic_cloth_dynamic(mean_edge: f64) -> DomainSchema {
        DomainSchema {
            name: "cloth-remesh".into(),
            sizing_head: true,
            ..DomainSchema::synthetic_cloth(mean_edge)
        }
    }

    /// Built-in cloth with a scripted obstacle exercising world edges.
    pub fn synthetic_cloth_obstacle(mean_edge: f64) -> DomainSchema {
        DomainSchema {
            name: "cloth-obstacle".into(),
            world_radius: 0.75 * mean_edge,
            scripted_velocity: true,
            ..DomainSchema::synthetic_cloth(mean_edge)
        }
    }

    /// Built-in scalar diffusion on a fixed mesh.
    pub fn synthetic_diffusion() -> DomainSchema {
        DomainSchema {
            dt: 1.0,
            ..DomainSchema::eulerian("diffusion", 1, vec![0], vec![1e-3])
        }
    }

    pub fn preset(name: &str) -> Option<DomainSchema> {
        Some(match name {
            "flag_simple" => DomainSchema::flag_simple(),
            "flag_dynamic" => DomainSchema::flag_dynamic(),
            "sphere_dynamic" => DomainSchema::sphere_dynamic(),
            "deforming_plate" => DomainSchema::deforming_plate(),
            "cylinder_flow" => DomainSchema::cylinder_flow(),
            "airfoil" => DomainSchema::airfoil(),
            _ => return None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_consistent() {
        for name in [
            "flag_simple",
            "flag_dynamic",
            "sphere_dynamic",
            "deforming_plate",
            "cylinder_flow",
            "airfoil",
        ] {
            DomainSchema::preset(name).unwrap().validate().unwrap();
        }
        DomainSchema::synthetic_cloth(0.1).validate().unwrap();
        DomainSchema::synthetic_cloth_dynamic(0.1).validate().unwrap();
        DomainSchema::synthetic_cloth_obstacle(0.1).validate().unwrap();
        DomainSchema::synthetic_diffusion().validate().unwrap();
    }

    #[test]
    fn output_layout_partitions_width() {
        let s = DomainSchema::airfoil();
        let l = s.output_layout();
        assert_eq!(l.integrated, 0..3);
        assert_eq!(l.direct, 3..4);
        assert_eq!(l.width, 4);
        let c = DomainSchema::synthetic_cloth_dynamic(0.1).output_layout();
        assert_eq!(c.sizing, Some(3..6));
        assert_eq!(c.width, 6);
    }

    #[test]
    fn second_order_needs_history() {
        let mut s = DomainSchema::flag_simple();
        s.history = 0;
        assert!(matches!(s.validate(), Err(Error::Schema(_))));
    }

    #[test]
    fn feature_widths() {
        let s = DomainSchema::flag_simple();
        assert_eq!(s.node_feature_width(), 6 + 3);
        assert_eq!(s.mesh_edge_width(), 7);
        assert_eq!(s.world_edge_width(), 4);
        let e = DomainSchema::cylinder_flow();
        assert_eq!(e.mesh_edge_width(), 3);
        assert_eq!(e.node_feature_width(), 6 + 2);
    }

    #[test]
    fn schema_json_round_trip() {
        let s = DomainSchema::airfoil();
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<DomainSchema>(&text).unwrap(), s);
    }
}
