//! Trajectories and their on-disk formats.
//!
//! A trajectory file is a `u64` little-endian header length, a JSON header,
//! and then for every state the arrays named in the header's `arrays` field
//! as little-endian `f32`. The `sizing` array (three values per node) is
//! present only when the trajectory records sizing fields. A dataset is a directory holding one such file
//! per trajectory plus `manifest.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::DomainSchema;
use crate::linalg::Sym2;
use crate::mesh::{Cells, NodeType, SimMesh};
use crate::sizing::SizingField;

const FORMAT: &str = "meshsim-trajectory";
const VERSION: u32 = 1;
const ARRAYS: [&str; 5] = ["mesh_pos", "world_pos", "node_type", "quantities", "sizing"];

/// Time-ordered states sharing dimensions, with schema metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub schema: Option<DomainSchema>,
    /// Leading states supplied as initial conditions rather than predicted.
    pub initial_states: usize,
    pub states: Vec<SimMesh>,
    /// Step at which a rollout produced a non-finite state and stopped.
    pub truncated_at: Option<usize>,
    /// Per-state sizing fields from the generating remesher: entry `t` lives
    /// on the nodes of `states[t]` and produced the mesh of `states[t + 1]`.
    pub sizing: Option<Vec<SizingField>>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum CellsHeader {
    Static(Vec<Vec<usize>>),
    PerStep(Vec<Vec<Vec<usize>>>),
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    dt: f64,
    dim_mesh: usize,
    dim_world: usize,
    n_quantities: usize,
    initial_states: usize,
    schema: Option<DomainSchema>,
    truncated_at: Option<usize>,
    node_counts: Vec<usize>,
    cells: CellsHeader,
    arrays: Vec<String>,
}

fn cells_to_vec(c: &Cells) -> Vec<Vec<usize>> {
    c.iter().map(|c| c.to_vec()).collect()
}

fn cells_from_vec(v: Vec<Vec<usize>>) -> std::result::Result<Cells, String> {
    let arity = v.first().map_or(3, |c| c.len());
    if v.iter().any(|c| c.len() != arity) {
        return Err("cells have mixed arity".into());
    }
    match arity {
        3 => Ok(Cells::Triangles(v.iter().map(|c| [c[0], c[1], c[2]]).collect())),
        4 => Ok(Cells::Tetrahedra(v.iter().map(|c| [c[0], c[1], c[2], c[3]]).collect())),
        a => Err(format!("unsupported cell arity {a}")),
    }
}

fn push_f32(out: &mut Vec<u8>, values: impl IntoIterator<Item = f64>) {
    for v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

struct Reader<'a> {
    data: &'a [u8],
}

impl Reader<'_> {
    fn take(&mut self, count: usize) -> std::result::Result<Vec<f64>, String> {
        if self.data.len() < 4 * count {
            return Err("array data is truncated".into());
        }
        let (head, rest) = self.data.split_at(4 * count);
        self.data = rest;
        Ok(head
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")) as f64)
            .collect())
    }
}

impl Trajectory {
    pub fn new(dt: f64, schema: Option<DomainSchema>, states: Vec<SimMesh>) -> Trajectory {
        Trajectory {
            dt,
            schema,
            initial_states: 1,
            states,
            truncated_at: None,
            sizing: None,
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// True when every state has the same cells.
    pub fn has_static_mesh(&self) -> bool {
        self.states.windows(2).all(|w| w[0].cells() == w[1].cells())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let first = self
            .states
            .first()
            .ok_or_else(|| Error::State("cannot serialize an empty trajectory".into()))?;
        let (dm, dw, nq) = (first.dim_mesh(), first.dim_world(), first.n_quantities());
        if self
            .states
            .iter()
            .any(|s| s.dim_mesh() != dm || s.dim_world() != dw || s.n_quantities() != nq)
        {
            return Err(Error::Dimension("trajectory states have differing dimensions".into()));
        }
        if let Some(sizing) = &self.sizing {
            if sizing.len() != self.states.len() || sizing.iter().zip(&self.states).any(|(f, s)| f.len() != s.node_count()) {
                return Err(Error::Dimension("sizing fields do not match the states".into()));
            }
        }
        let arrays = if self.sizing.is_some() { &ARRAYS[..] } else { &ARRAYS[..4] };
        let cells = if self.has_static_mesh() {
            CellsHeader::Static(cells_to_vec(first.cells()))
        } else {
            CellsHeader::PerStep(self.states.iter().map(|s| cells_to_vec(s.cells())).collect())
        };
        let header = Header {
            format: FORMAT.into(),
            version: VERSION,
            dt: self.dt,
            dim_mesh: dm,
            dim_world: dw,
            n_quantities: nq,
            initial_states: self.initial_states,
            schema: self.schema.clone(),
            truncated_at: self.truncated_at,
            node_counts: self.states.iter().map(|s| s.node_count()).collect(),
            cells,
            arrays: arrays.iter().map(|s| s.to_string()).collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (t, s) in self.states.iter().enumerate() {
            push_f32(&mut out, s.mesh_pos_flat().iter().copied());
            push_f32(&mut out, s.world_pos_flat().iter().copied());
            push_f32(&mut out, s.node_types().iter().map(|t| t.index() as f64));
            push_f32(&mut out, s.quantities_flat().iter().copied());
            if let Some(sizing) = &self.sizing {
                push_f32(&mut out, sizing[t].to_flat());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Trajectory, String> {
        let len_bytes: [u8; 8] = bytes
            .get(..8)
            .ok_or("file too short for header length")?
            .try_into()
            .expect("eight bytes");
        let len = u64::from_le_bytes(len_bytes) as usize;
        let json = bytes.get(8..8 + len).ok_or("truncated header")?;
        let h: Header = serde_json::from_slice(json).map_err(|e| e.to_string())?;
        if h.format != FORMAT || h.version != VERSION {
            return Err(format!("unsupported trajectory {} v{}", h.format, h.version));
        }
        let mut order = Vec::new();
        for a in &h.arrays {
            match ARRAYS.iter().position(|x| x == a) {
                Some(k) if !order.contains(&k) => order.push(k),
                _ => return Err(format!("unknown or repeated array '{a}'")),
            }
        }
        let with_sizing = order.contains(&4);
        if order.len() != 4 + with_sizing as usize {
            return Err("header must list the four state arrays".into());
        }
        let steps = h.node_counts.len();
        let per_step: Vec<Cells> = match h.cells {
            CellsHeader::Static(c) => vec![cells_from_vec(c)?; steps],
            CellsHeader::PerStep(c) if c.len() == steps => {
                c.into_iter().map(cells_from_vec).collect::<std::result::Result<_, _>>()?
            }
            CellsHeader::PerStep(_) => return Err("per-step cells do not match node_counts".into()),
        };
        let mut reader = Reader { data: &bytes[8 + len..] };
        let mut states = Vec::with_capacity(steps);
        let mut sizing = Vec::new();
        for (n, cells) in h.node_counts.iter().zip(per_step) {
            let mut arrays: [Vec<f64>; 5] = Default::default();
            for &k in &order {
                let width = [h.dim_mesh, h.dim_world, 1, h.n_quantities, 3][k];
                arrays[k] = reader.take(n * width)?;
            }
            let [mesh_pos, world_pos, types, quantities, s] = arrays;
            if with_sizing {
                sizing.push(SizingField::new(s.chunks_exact(3).map(|c| Sym2::new(c[0], c[1], c[2])).collect()));
            }
            let node_type = types
                .iter()
                .map(|&t| {
                    NodeType::from_index(t as usize)
                        .filter(|_| t >= 0.0 && t.fract() == 0.0)
                        .ok_or_else(|| format!("invalid node type {t}"))
                })
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let mesh = SimMesh::new(
                h.dim_mesh,
                h.dim_world,
                h.n_quantities,
                mesh_pos,
                world_pos,
                node_type,
                quantities,
                cells,
            )
            .map_err(|e| e.to_string())?;
            states.push(mesh);
        }
        if !reader.data.is_empty() {
            return Err(format!("{} trailing bytes after array data", reader.data.len()));
        }
        Ok(Trajectory {
            dt: h.dt,
            schema: h.schema,
            initial_states: h.initial_states,
            states,
            truncated_at: h.truncated_at,
            sizing: with_sizing.then_some(sizing),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Trajectory> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Trajectory::from_bytes(&bytes).map_err(|m| Error::format(path, m))
    }

    /// Copy with every value rounded to `f32`, exactly as a save/load
    /// round trip would produce.
    pub fn quantized(&self) -> Result<Trajectory> {
        Trajectory::from_bytes(&self.to_bytes()?).map_err(Error::State)
    }
}

/// Trajectory file names per split.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<String>,
    pub valid: Vec<String>,
    pub test: Vec<String>,
}

/// Dataset directory index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub domain: String,
    pub schema: DomainSchema,
    pub dt: f64,
    /// Output steps per trajectory (states = steps + 1).
    pub n_steps: usize,
    pub seed: u64,
    pub trajectories: usize,
    pub splits: Splits,
}

pub const MANIFEST: &str = "manifest.json";

impl Manifest {
    /// Assigns the first 80% of trajectories to training and splits the
    /// rest evenly between validation and test.
    pub fn split_names(names: &[String]) -> Splits {
        let n = names.len();
        let n_train = (n * 8).div_ceil(10).min(n);
        let n_valid = (n - n_train) / 2;
        Splits {
            train: names[..n_train].to_vec(),
            valid: names[n_train..n_train + n_valid].to_vec(),
            test: names[n_train + n_valid..].to_vec(),
        }
    }

    pub fn read(dir: impl AsRef<Path>) -> Result<Manifest> {
        let path = dir.as_ref().join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let path = dir.as_ref().join(MANIFEST);
        let mut text =
            serde_json::to_string_pretty(self).map_err(|e| Error::format(&path, e.to_string()))?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn all_files(&self) -> impl Iterator<Item = &String> {
        self.splits.train.iter().chain(&self.splits.valid).chain(&self.splits.test)
    }
}

/// A loaded dataset directory.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub train: Vec<Trajectory>,
    pub valid: Vec<Trajectory>,
    pub test: Vec<Trajectory>,
}

impl Dataset {
    pub fn load(dir: impl AsRef<Path>) -> Result<Dataset> {
        let dir = dir.as_ref().to_path_buf();
        let manifest = Manifest::read(&dir)?;
        let load = |names: &[String]| -> Result<Vec<Trajectory>> {
            names.iter().map(|n| Trajectory::load(dir.join(n))).collect()
        };
        Ok(Dataset {
            train: load(&manifest.splits.train)?,
            valid: load(&manifest.splits.valid)?,
            test: load(&manifest.splits.test)?,
            dir,
            manifest,
        })
    }

    /// Trajectory by index over the concatenation train, valid, test.
    pub fn get(&self, index: usize) -> Option<&Trajectory> {
        self.train.iter().chain(&self.valid).chain(&self.test).nth(index)
    }
}
