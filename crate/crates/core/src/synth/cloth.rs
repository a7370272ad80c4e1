//! Mass-spring cloth.
//!
//! Rest lengths are mesh-space edge lengths and lumped masses come from
//! mesh-space triangle areas, so a remeshed sheet keeps its material. The
//! three quantity channels hold node velocities. Scripted nodes (KINEMATIC,
//! OBSTACLE) move with their stored velocity; OBSTACLE nodes additionally
//! form a sphere centred on their mean position that pushes cloth away.

use crate::error::{Error, Result};
use crate::linalg::{dot3, norm3, sub3, Vec3};
use crate::mesh::{derive_edges, signed_area, NodeType, SimMesh};

#[derive(Clone, Debug, PartialEq)]
pub struct ClothParams {
    /// Spring force per unit strain.
    pub stiffness: f64,
    /// Mass-proportional velocity damping rate.
    pub damping: f64,
    /// Damping of relative velocity along each spring.
    pub spring_damping: f64,
    pub gravity: Vec3,
    /// Mass per unit mesh-space area.
    pub density: f64,
    pub substeps: usize,
    /// Output step.
    pub dt: f64,
    /// Radius of the obstacle sphere.
    pub obstacle_radius: f64,
    /// Repulsion force per unit penetration.
    pub obstacle_stiffness: f64,
}

impl Default for ClothParams {
    fn default() -> Self {
        ClothParams {
            stiffness: 1.0,
            damping: 0.05,
            spring_damping: 0.02,
            gravity: [0.0, 0.0, -1.0],
            density: 1.0,
            substeps: 16,
            dt: 0.02,
            obstacle_radius: 0.2,
            obstacle_stiffness: 20.0,
        }
    }
}

/// Springs and masses derived from one mesh.
#[derive(Clone, Debug)]
pub struct ClothSystem {
    params: ClothParams,
    springs: Vec<(usize, usize, f64)>,
    mass: Vec<f64>,
    types: Vec<NodeType>,
    obstacle: Vec<usize>,
}

impl ClothSystem {
    pub fn new(mesh: &SimMesh, params: &ClothParams) -> Result<ClothSystem> {
        if mesh.dim_mesh() != 2 || mesh.dim_world() != 3 || mesh.n_quantities() < 3 {
            return Err(Error::Dimension(
                "cloth needs 2D mesh space, 3D world space and three velocity channels".into(),
            ));
        }
        let tris = mesh
            .cells()
            .triangles()
            .ok_or_else(|| Error::Dimension("cloth needs triangle cells".into()))?;
        if params.substeps == 0 || !(params.dt > 0.0) {
            return Err(Error::Config("cloth needs positive substeps and dt".into()));
        }
        let types = mesh.node_types().to_vec();
        let is_obstacle = |i: usize| types[i] == NodeType::Obstacle;
        let springs = derive_edges(mesh)?
            .into_iter()
            .filter(|&(i, j)| !is_obstacle(i) && !is_obstacle(j))
            .map(|(i, j)| {
                let (a, b) = (mesh.uv(i), mesh.uv(j));
                (i, j, (a[0] - b[0]).hypot(a[1] - b[1]))
            })
            .collect();
        let mut mass = vec![0.0; mesh.node_count()];
        for t in tris {
            let a = signed_area(mesh.uv(t[0]), mesh.uv(t[1]), mesh.uv(t[2])).abs();
            for &v in t {
                mass[v] += params.density * a / 3.0;
            }
        }
        let obstacle = (0..mesh.node_count()).filter(|&i| is_obstacle(i)).collect();
        Ok(ClothSystem {
            params: params.clone(),
            springs,
            mass,
            types,
            obstacle,
        })
    }

    fn check(&self, mesh: &SimMesh) -> Result<()> {
        if mesh.node_count() != self.mass.len() || mesh.node_types() != self.types.as_slice() {
            return Err(Error::Dimension("state does not belong to this cloth system".into()));
        }
        Ok(())
    }

    fn sphere_center(&self, x: &[Vec3]) -> Option<Vec3> {
        if self.obstacle.is_empty() {
            return None;
        }
        let mut c = [0.0; 3];
        for &i in &self.obstacle {
            for d in 0..3 {
                c[d] += x[i][d];
            }
        }
        Some(c.map(|v| v / self.obstacle.len() as f64))
    }

    fn forces(&self, x: &[Vec3], v: &[Vec3]) -> Vec<Vec3> {
        let p = &self.params;
        let mut f: Vec<Vec3> = self
            .mass
            .iter()
            .zip(v)
            .map(|(&m, v)| std::array::from_fn(|d| m * (p.gravity[d] - p.damping * v[d])))
            .collect();
        for &(i, j, rest) in &self.springs {
            let d = sub3(x[j], x[i]);
            let len = norm3(d);
            if len == 0.0 {
                continue;
            }
            let n = d.map(|c| c / len);
            let rel = dot3(sub3(v[j], v[i]), n);
            let mag = p.stiffness * (len - rest) / rest + p.spring_damping * rel;
            for k in 0..3 {
                f[i][k] += mag * n[k];
                f[j][k] -= mag * n[k];
            }
        }
        if let Some(c) = self.sphere_center(x) {
            for (i, fi) in f.iter_mut().enumerate() {
                if self.types[i] != NodeType::Normal {
                    continue;
                }
                let d = sub3(x[i], c);
                let r = norm3(d);
                if r < p.obstacle_radius && r > 0.0 {
                    let mag = p.obstacle_stiffness * (p.obstacle_radius - r) / r;
                    for k in 0..3 {
                        fi[k] += mag * d[k];
                    }
                }
            }
        }
        f
    }

    /// One output step of `substeps` semi-implicit Euler substeps.
    pub fn step(&self, mesh: &SimMesh) -> Result<SimMesh> {
        self.check(mesh)?;
        let n = mesh.node_count();
        let nq = mesh.n_quantities();
        let mut x: Vec<Vec3> = (0..n).map(|i| mesh.xyz(i)).collect();
        let mut v: Vec<Vec3> = (0..n)
            .map(|i| {
                let q = mesh.quantity(i);
                [q[0], q[1], q[2]]
            })
            .collect();
        let h = self.params.dt / self.params.substeps as f64;
        for _ in 0..self.params.substeps {
            let f = self.forces(&x, &v);
            for i in 0..n {
                if self.types[i] == NodeType::Normal && self.mass[i] > 0.0 {
                    for k in 0..3 {
                        v[i][k] += h * f[i][k] / self.mass[i];
                    }
                }
                for k in 0..3 {
                    x[i][k] += h * v[i][k];
                }
            }
        }
        let world: Vec<f64> = x.iter().flatten().copied().collect();
        if world.iter().chain(v.iter().flatten()).any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("cloth solver produced a non-finite state".into()));
        }
        let mut quant = mesh.quantities_flat().to_vec();
        for i in 0..n {
            quant[i * nq..i * nq + 3].copy_from_slice(&v[i]);
        }
        mesh.with_world_pos(world)?.with_quantities(quant)
    }

    /// Kinetic, spring, gravitational and obstacle energy of the free nodes.
    pub fn energy(&self, mesh: &SimMesh) -> Result<f64> {
        self.check(mesh)?;
        let p = &self.params;
        let n = mesh.node_count();
        let x: Vec<Vec3> = (0..n).map(|i| mesh.xyz(i)).collect();
        let mut e = 0.0;
        for i in 0..n {
            if self.types[i] == NodeType::Normal {
                let q = mesh.quantity(i);
                let v = [q[0], q[1], q[2]];
                e += 0.5 * self.mass[i] * dot3(v, v) - self.mass[i] * dot3(p.gravity, x[i]);
            }
        }
        for &(i, j, rest) in &self.springs {
            let s = norm3(sub3(x[j], x[i])) - rest;
            e += 0.5 * p.stiffness * s * s / rest;
        }
        if let Some(c) = self.sphere_center(&x) {
            for i in 0..n {
                let r = norm3(sub3(x[i], c));
                if self.types[i] == NodeType::Normal && r < p.obstacle_radius {
                    e += 0.5 * p.obstacle_stiffness * (p.obstacle_radius - r).powi(2);
                }
            }
        }
        Ok(e)
    }

    /// Per-node compression: the largest relative shortening of an incident
    /// spring, zero when every spring is at or beyond rest length.
    pub fn compression(&self, mesh: &SimMesh) -> Vec<f64> {
        let mut out = vec![0.0f64; mesh.node_count()];
        for &(i, j, rest) in &self.springs {
            let s = (1.0 - norm3(sub3(mesh.xyz(j), mesh.xyz(i))) / rest).max(0.0);
            out[i] = out[i].max(s);
            out[j] = out[j].max(s);
        }
        out
    }
}

/// Advances a cloth state by one output step.
pub fn cloth_spring_step(mesh: &SimMesh, params: &ClothParams) -> Result<SimMesh> {
    ClothSystem::new(mesh, params)?.step(mesh)
}
