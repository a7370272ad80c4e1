//! Classical solvers producing ground-truth trajectories, and dataset
//! generation on top of them.

mod cloth;
mod diffusion;

pub use cloth::{cloth_spring_step, ClothParams, ClothSystem};
pub use diffusion::{diffuse, diffusion_step, DiffusionParams};

use std::fs;
use std::path::Path;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::DomainSchema;
use crate::linalg::Sym2;
use crate::mesh::{grid_triangles, Cells, NodeType, SimMesh};
use crate::remesh::remesh;
use crate::sizing::SizingField;
use crate::trajectory::{Manifest, Trajectory};

/// Built-in synthetic domains.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    /// Mass-spring sheet on a fixed grid.
    Cloth,
    /// Mass-spring sheet remeshed every step.
    ClothRemesh,
    /// Mass-spring sheet hit by a scripted sphere.
    ClothObstacle,
    /// Scalar diffusion with Dirichlet boundaries.
    Diffusion,
}

impl Domain {
    pub const ALL: [Domain; 4] = [Domain::Cloth, Domain::ClothRemesh, Domain::ClothObstacle, Domain::Diffusion];

    pub fn name(self) -> &'static str {
        match self {
            Domain::Cloth => "cloth-spring",
            Domain::ClothRemesh => "cloth-remesh",
            Domain::ClothObstacle => "cloth-obstacle",
            Domain::Diffusion => "diffusion",
        }
    }

    pub fn parse(name: &str) -> Option<Domain> {
        Domain::ALL.into_iter().find(|d| d.name() == name)
    }

    pub fn default_grid(self) -> usize {
        match self {
            Domain::Diffusion => 14,
            _ => 8,
        }
    }

    /// Schema for a `grid × grid` instance.
    pub fn schema(self, grid: usize) -> DomainSchema {
        let (uv, tris) = grid_triangles(grid, grid, 1.0, 1.0);
        let n = grid * grid;
        let flat = SimMesh::new(2, 0, 0, uv, vec![], vec![NodeType::Normal; n], vec![], Cells::Triangles(tris))
            .expect("grid mesh is valid");
        let me = flat.mean_edge_length();
        match self {
            Domain::Cloth => DomainSchema::synthetic_cloth(me),
            Domain::ClothRemesh => DomainSchema::synthetic_cloth_dynamic(me),
            Domain::ClothObstacle => DomainSchema::synthetic_cloth_obstacle(me),
            Domain::Diffusion => DomainSchema::synthetic_diffusion(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenConfig {
    pub domain: Domain,
    pub trajectories: usize,
    pub steps: usize,
    pub seed: u64,
    /// Nodes per side; `None` uses the domain default.
    pub grid: Option<usize>,
    pub cloth: ClothParams,
    pub diffusion: DiffusionParams,
}

impl GenConfig {
    pub fn new(domain: Domain, trajectories: usize, steps: usize, seed: u64) -> GenConfig {
        GenConfig {
            domain,
            trajectories,
            steps,
            seed,
            grid: None,
            cloth: ClothParams::default(),
            diffusion: DiffusionParams::default(),
        }
    }

    fn grid(&self) -> usize {
        self.grid.unwrap_or(self.domain.default_grid())
    }
}

fn trajectory_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (index as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Horizontal sheet with random yaw, pin pattern and initial velocity.
fn cloth_sheet(grid: usize, rng: &mut ChaCha8Rng) -> SimMesh {
    let (uv, tris) = grid_triangles(grid, grid, 1.0, 1.0);
    let n = grid * grid;
    let yaw = rng.random_range(0.0..std::f64::consts::TAU);
    let (s, c) = yaw.sin_cos();
    let top = grid * (grid - 1);
    let pins: Vec<usize> = match rng.random_range(0..3u32) {
        0 => vec![top, n - 1],
        1 => (top..n).collect(),
        _ => vec![top, top + grid / 2, n - 1],
    };
    let v0: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.5..0.5));
    let mut world = Vec::with_capacity(3 * n);
    let mut types = Vec::with_capacity(n);
    let mut quant = Vec::with_capacity(3 * n);
    for i in 0..n {
        let (x, y) = (uv[2 * i] - 0.5, uv[2 * i + 1] - 0.5);
        world.extend([c * x - s * y, s * x + c * y, 0.0]);
        if pins.contains(&i) {
            types.push(NodeType::Kinematic);
            quant.extend([0.0; 3]);
        } else {
            types.push(NodeType::Normal);
            quant.extend(v0);
        }
    }
    SimMesh::new(2, 3, 3, uv, world, types, quant, Cells::Triangles(tris)).expect("grid mesh is valid")
}

/// Appends six OBSTACLE nodes on a sphere below the sheet, rising.
fn add_obstacle(sheet: &SimMesh, params: &ClothParams, rng: &mut ChaCha8Rng) -> SimMesh {
    let n = sheet.node_count();
    let mut uv = sheet.mesh_pos_flat().to_vec();
    let mut world = sheet.world_pos_flat().to_vec();
    let mut types = sheet.node_types().to_vec();
    let mut quant = sheet.quantities_flat().to_vec();
    let center = [rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), -0.5];
    let vel = [0.0, 0.0, rng.random_range(0.4..0.8)];
    let r = params.obstacle_radius;
    let dirs = [
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [-1.0, 0.0, 0.0],
        [0.0, -1.0, 0.0],
        [0.0, 0.0, 1.0],
        [0.0, 0.0, -1.0],
    ];
    for (k, d) in dirs.iter().enumerate() {
        // the obstacle's own hexagon in mesh space, away from the sheet
        let a = k as f64 * std::f64::consts::PI / 3.0;
        uv.extend([2.0 + 0.25 * a.cos(), 0.5 + 0.25 * a.sin()]);
        world.extend((0..3).map(|j| center[j] + r * d[j]));
        types.push(NodeType::Obstacle);
        quant.extend(vel);
    }
    let mut tris = sheet.cells().triangles().expect("triangles").to_vec();
    tris.extend([[n, n + 1, n + 2], [n, n + 2, n + 3], [n, n + 3, n + 4], [n, n + 4, n + 5]]);
    SimMesh::new(2, 3, 3, uv, world, types, quant, Cells::Triangles(tris)).expect("valid obstacle mesh")
}

/// Isotropic target sizing: `grid_edge · 1.6` on relaxed cloth, shrinking
/// to `grid_edge · 0.5` where springs are compressed by 20% or more.
pub fn compression_sizing(compression: &[f64], grid_edge: f64) -> SizingField {
    let (coarse, fine) = (1.6 * grid_edge, 0.5 * grid_edge);
    SizingField::new(
        compression
            .iter()
            .map(|&c| {
                let t = (c / 0.2).min(1.0);
                let ell = coarse + (fine - coarse) * t;
                Sym2::scaled_identity(1.0 / (ell * ell))
            })
            .collect(),
    )
}

fn diffusion_plate(grid: usize, rng: &mut ChaCha8Rng) -> SimMesh {
    let (uv, tris) = grid_triangles(grid, grid, 1.0, 1.0);
    let n = grid * grid;
    let [a, b, c]: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
    let bumps: Vec<([f64; 2], f64)> = (0..2)
        .map(|_| ([rng.random_range(0.2..0.8), rng.random_range(0.2..0.8)], rng.random_range(-1.0..1.0)))
        .collect();
    let mut types = Vec::with_capacity(n);
    let mut q = Vec::with_capacity(n);
    for i in 0..n {
        let (gx, gy) = (i % grid, i / grid);
        let (x, y) = (uv[2 * i], uv[2 * i + 1]);
        let base = a + b * x + c * y;
        if gx == 0 || gy == 0 || gx == grid - 1 || gy == grid - 1 {
            types.push(NodeType::Inflow);
            q.push(base);
        } else {
            types.push(NodeType::Normal);
            let bump: f64 = bumps
                .iter()
                .map(|(p, amp)| amp * (-((x - p[0]).powi(2) + (y - p[1]).powi(2)) / (2.0 * 0.15f64.powi(2))).exp())
                .sum();
            q.push(base + bump);
        }
    }
    SimMesh::new(2, 0, 1, uv, vec![], types, q, Cells::Triangles(tris)).expect("grid mesh is valid")
}

/// Generates trajectory `index` of a dataset; `steps + 1` states.
pub fn generate_trajectory(config: &GenConfig, index: usize) -> Result<Trajectory> {
    let grid = config.grid();
    if grid < 2 {
        return Err(Error::Config("grid needs at least two nodes per side".into()));
    }
    let mut rng = trajectory_rng(config.seed, index);
    let schema = config.domain.schema(grid);
    let mut states = Vec::with_capacity(config.steps + 1);
    let mut sizing_fields = None;
    match config.domain {
        Domain::Diffusion => {
            let mut s = diffusion_plate(grid, &mut rng);
            states.push(s.clone());
            for _ in 0..config.steps {
                s = diffusion_step(&s, &config.diffusion)?;
                states.push(s.clone());
            }
        }
        Domain::Cloth | Domain::ClothObstacle => {
            let mut s = cloth_sheet(grid, &mut rng);
            if config.domain == Domain::ClothObstacle {
                s = add_obstacle(&s, &config.cloth, &mut rng);
            }
            let sys = ClothSystem::new(&s, &config.cloth)?;
            states.push(s.clone());
            for _ in 0..config.steps {
                s = sys.step(&s)?;
                states.push(s.clone());
            }
        }
        Domain::ClothRemesh => {
            let grid_edge = 1.0 / (grid - 1) as f64;
            let mut s = cloth_sheet(grid, &mut rng);
            let mut fields = Vec::with_capacity(config.steps + 1);
            for step in 0..=config.steps {
                let sys = ClothSystem::new(&s, &config.cloth)?;
                let moved = sys.step(&s)?;
                let sizing = compression_sizing(&sys.compression(&moved), grid_edge);
                states.push(s);
                if step == config.steps {
                    fields.push(sizing);
                    break;
                }
                s = remesh(&moved, &sizing)?.mesh;
                fields.push(sizing);
            }
            sizing_fields = Some(fields);
        }
    }
    let dt = match config.domain {
        Domain::Diffusion => schema.dt,
        _ => config.cloth.dt,
    };
    let schema = DomainSchema { dt, ..schema };
    let mut traj = Trajectory::new(dt, Some(schema), states);
    traj.sizing = sizing_fields;
    Ok(traj)
}

pub fn trajectory_file_name(index: usize) -> String {
    format!("traj_{index:05}.bin")
}

/// Writes `manifest.json` and one file per trajectory into `out_dir`.
pub fn generate_dataset(config: &GenConfig, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    let out = out_dir.as_ref();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let names: Vec<String> = (0..config.trajectories).map(trajectory_file_name).collect();
    for (i, name) in names.iter().enumerate() {
        let t = generate_trajectory(config, i)?;
        t.save(out.join(name))?;
        log::info!("wrote {name} ({} states)", t.len());
    }
    let schema = config.domain.schema(config.grid());
    let dt = match config.domain {
        Domain::Diffusion => schema.dt,
        _ => config.cloth.dt,
    };
    let manifest = Manifest {
        domain: config.domain.name().into(),
        schema: DomainSchema { dt, ..schema },
        dt,
        n_steps: config.steps,
        seed: config.seed,
        trajectories: config.trajectories,
        splits: Manifest::split_names(&names),
    };
    manifest.write(out)?;
    Ok(manifest)
}
