//! Checkpoint file: `u64` little-endian header length, JSON header, then
//! every parameter tensor as little-endian `f64` in declaration order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, Normalizer};
use crate::error::{Error, Result};
use crate::graph::DomainSchema;
use crate::nn::{NetConfig, Network};

const FORMAT: &str = "meshsim-checkpoint";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorSpec {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Normalizers {
    node: Normalizer,
    mesh_edge: Normalizer,
    world_edge: Normalizer,
    output: Normalizer,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    schema: DomainSchema,
    net: NetConfig,
    /// Node, mesh-edge, world-edge input widths and output width.
    widths: [usize; 4],
    normalizers: Normalizers,
    tensors: Vec<TensorSpec>,
}

impl Model {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            format: FORMAT.into(),
            version: VERSION,
            schema: self.schema.clone(),
            net: self.net.config,
            widths: [
                self.schema.node_feature_width(),
                self.schema.mesh_edge_width(),
                self.schema.world_edge_width(),
                self.schema.output_width(),
            ],
            normalizers: Normalizers {
                node: self.node_norm.clone(),
                mesh_edge: self.mesh_edge_norm.clone(),
                world_edge: self.world_edge_norm.clone(),
                output: self.output_norm.clone(),
            },
            tensors: self
                .net
                .tensor_specs()
                .into_iter()
                .map(|(name, shape)| TensorSpec { name, shape })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(8 + json.len() + 8 * self.net.parameter_count());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in self.net.tensors() {
            for v in t {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Model, String> {
        let len_bytes: [u8; 8] = bytes
            .get(..8)
            .ok_or("file too short for header length")?
            .try_into()
            .expect("eight bytes");
        let len = u64::from_le_bytes(len_bytes) as usize;
        let json = bytes.get(8..8 + len).ok_or("truncated header")?;
        let header: Header = serde_json::from_slice(json).map_err(|e| e.to_string())?;
        if header.format != FORMAT || header.version != VERSION {
            return Err(format!("unsupported checkpoint {} v{}", header.format, header.version));
        }
        header.schema.validate().map_err(|e| e.to_string())?;
        let mut data = &bytes[8 + len..];
        let mut values = Vec::with_capacity(header.tensors.len());
        for t in &header.tensors {
            let count: usize = t.shape.iter().product();
            if data.len() < 8 * count {
                return Err(format!("tensor {} is truncated", t.name));
            }
            let (head, rest) = data.split_at(8 * count);
            values.push(
                head.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
                    .collect(),
            );
            data = rest;
        }
        if !data.is_empty() {
            return Err(format!("{} trailing bytes after tensor data", data.len()));
        }
        let specs: Vec<(String, Vec<usize>)> =
            header.tensors.into_iter().map(|t| (t.name, t.shape)).collect();
        let net = Network::from_tensors(header.net, header.widths, &specs, values)?;
        let n = header.normalizers;
        let model = Model {
            schema: header.schema,
            net,
            node_norm: n.node,
            mesh_edge_norm: n.mesh_edge,
            world_edge_norm: n.world_edge,
            output_norm: n.output,
        };
        let widths = [
            model.schema.node_feature_width(),
            model.schema.mesh_edge_width(),
            model.schema.world_edge_width(),
            model.schema.output_width(),
        ];
        let norm_widths = [
            model.node_norm.width(),
            model.mesh_edge_norm.width(),
            model.world_edge_norm.width(),
            model.output_norm.width(),
        ];
        if widths != header.widths || norm_widths != widths {
            return Err("feature widths disagree with the schema".into());
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Model> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Model::from_bytes(&bytes).map_err(|m| Error::format(path, m))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Matrix;

    #[test]
    fn save_load_save_is_byte_identical() {
        let mut m = Model::new(
            DomainSchema::synthetic_cloth_dynamic(0.1),
            NetConfig { latent: 8, hidden_layers: 2, blocks: 2 },
            7,
        )
        .unwrap();
        m.node_norm.accumulate(&Matrix::from_vec(2, 9, (0..18).map(|v| (v as f64 * 0.37).sin()).collect()));
        m.freeze();
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
        m.save(&a).unwrap();
        let back = Model::load(&a).unwrap();
        assert_eq!(back, m);
        back.save(&b).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    }

    #[test]
    fn truncated_file_is_format_error() {
        let m = Model::new(DomainSchema::synthetic_diffusion(), NetConfig { latent: 4, hidden_layers: 1, blocks: 1 }, 0)
            .unwrap();
        let bytes = m.to_bytes();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.ckpt");
        fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(Model::load(&p), Err(Error::Format { .. })));
        assert!(matches!(Model::load(dir.path().join("missing")), Err(Error::Io { .. })));
    }
}
