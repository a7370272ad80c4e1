use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::mlp::{Mlp, MlpCache};
use crate::graph::{EdgeSet, MultiGraph};

/// Network sizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Width of every hidden layer and latent vector.
    pub latent: usize,
    /// Hidden ReLU layers per MLP.
    pub hidden_layers: usize,
    /// Number of message-passing blocks.
    pub blocks: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            latent: 128,
            hidden_layers: 2,
            blocks: 15,
        }
    }
}

/// One message-passing block: mesh-edge, world-edge and node update MLPs.
#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub mesh_edge: Mlp,
    pub world_edge: Mlp,
    pub node: Mlp,
}

/// Node and edge latents flowing through the processor.
#[derive(Clone, Debug, PartialEq)]
pub struct Latents {
    pub nodes: Matrix,
    pub mesh_edges: Matrix,
    pub world_edges: Matrix,
}

/// Encode-process-decode network over a [`MultiGraph`].
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub config: NetConfig,
    pub node_encoder: Mlp,
    pub mesh_edge_encoder: Mlp,
    pub world_edge_encoder: Mlp,
    pub blocks: Vec<Block>,
    pub decoder: Mlp,
}

struct BlockCache {
    mesh_edge: MlpCache,
    world_edge: MlpCache,
    node: MlpCache,
}

/// Activations saved by [`Network::forward`].
pub struct NetworkCache {
    node_encoder: MlpCache,
    mesh_edge_encoder: MlpCache,
    world_edge_encoder: MlpCache,
    blocks: Vec<BlockCache>,
    decoder: MlpCache,
}

impl NetworkCache {
    /// On/off state of every ReLU unit in the pass.
    pub fn activation_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        self.node_encoder.push_active(&mut out);
        self.mesh_edge_encoder.push_active(&mut out);
        self.world_edge_encoder.push_active(&mut out);
        for b in &self.blocks {
            b.mesh_edge.push_active(&mut out);
            b.world_edge.push_active(&mut out);
            b.node.push_active(&mut out);
        }
        self.decoder.push_active(&mut out);
        out
    }
}

/// Rows `[features[e], nodes[senders[e]], nodes[receivers[e]]]`.
fn edge_inputs(edges: &EdgeSet, features: &Matrix, nodes: &Matrix) -> Matrix {
    let (fe, fv) = (features.cols(), nodes.cols());
    let mut x = Matrix::zeros(edges.len(), fe + 2 * fv);
    for e in 0..edges.len() {
        let row = x.row_mut(e);
        row[..fe].copy_from_slice(features.row(e));
        row[fe..fe + fv].copy_from_slice(nodes.row(edges.senders[e]));
        row[fe + fv..].copy_from_slice(nodes.row(edges.receivers[e]));
    }
    x
}

/// Sums edge rows into their receivers, in edge-list order.
fn aggregate(edges: &EdgeSet, values: &Matrix, n: usize) -> Matrix {
    let mut out = Matrix::zeros(n, values.cols());
    for e in 0..edges.len() {
        let src = values.row(e);
        for (o, v) in out.row_mut(edges.receivers[e]).iter_mut().zip(src) {
            *o += v;
        }
    }
    out
}

fn concat3(a: &Matrix, b: &Matrix, c: &Matrix) -> Matrix {
    let (wa, wb, wc) = (a.cols(), b.cols(), c.cols());
    let mut x = Matrix::zeros(a.rows(), wa + wb + wc);
    for i in 0..a.rows() {
        let row = x.row_mut(i);
        row[..wa].copy_from_slice(a.row(i));
        row[wa..wa + wb].copy_from_slice(b.row(i));
        row[wa + wb..].copy_from_slice(c.row(i));
    }
    x
}

fn add_rows(dst: &mut Matrix, i: usize, src: &[f64]) {
    for (d, s) in dst.row_mut(i).iter_mut().zip(src) {
        *d += s;
    }
}

impl Block {
    fn new<R: Rng + ?Sized>(config: &NetConfig, rng: &mut R) -> Block {
        let (l, h) = (config.latent, config.hidden_layers);
        Block {
            mesh_edge: Mlp::new(3 * l, l, h, l, true, rng),
            world_edge: Mlp::new(3 * l, l, h, l, true, rng),
            node: Mlp::new(3 * l, l, h, l, true, rng),
        }
    }

    fn zeros_like(&self) -> Block {
        Block {
            mesh_edge: self.mesh_edge.zeros_like(),
            world_edge: self.world_edge.zeros_like(),
            node: self.node.zeros_like(),
        }
    }

    /// One residual message-passing step.
    pub fn forward(&self, graph: &MultiGraph, x: &Latents) -> Latents {
        self.forward_cached(graph, x).0
    }

    fn forward_cached(&self, graph: &MultiGraph, x: &Latents) -> (Latents, BlockCache) {
        let n = x.nodes.rows();
        let (me, mc) = self
            .mesh_edge
            .forward(&edge_inputs(&graph.mesh_edges, &x.mesh_edges, &x.nodes));
        let (we, wc) = self
            .world_edge
            .forward(&edge_inputs(&graph.world_edges, &x.world_edges, &x.nodes));
        let agg_m = aggregate(&graph.mesh_edges, &me, n);
        let agg_w = aggregate(&graph.world_edges, &we, n);
        let (v, vc) = self.node.forward(&concat3(&x.nodes, &agg_m, &agg_w));
        let mut out = Latents {
            nodes: v,
            mesh_edges: me,
            world_edges: we,
        };
        out.nodes.add_assign(&x.nodes);
        out.mesh_edges.add_assign(&x.mesh_edges);
        out.world_edges.add_assign(&x.world_edges);
        (
            out,
            BlockCache {
                mesh_edge: mc,
                world_edge: wc,
                node: vc,
            },
        )
    }

    fn backward(&self, graph: &MultiGraph, cache: &BlockCache, d: Latents, grad: &mut Block) -> Latents {
        let l = d.nodes.cols();
        let dnode_in = self.node.backward(&cache.node, &d.nodes, &mut grad.node);
        let mut dnodes = d.nodes;
        for i in 0..dnodes.rows() {
            add_rows(&mut dnodes, i, &dnode_in.row(i)[..l]);
        }
        let mut edge_pass = |edges: &EdgeSet, dres: Matrix, offset: usize, mlp: &Mlp, mc: &MlpCache, g: &mut Mlp| {
            // gradient of the MLP output: residual path plus the receiver's aggregate
            let mut dout = dres.clone();
            for e in 0..edges.len() {
                add_rows(&mut dout, e, &dnode_in.row(edges.receivers[e])[offset..offset + l]);
            }
            let din = mlp.backward(mc, &dout, g);
            let fe = dres.cols();
            let mut dfeat = dres;
            for e in 0..edges.len() {
                let r = din.row(e);
                add_rows(&mut dfeat, e, &r[..fe]);
                add_rows(&mut dnodes, edges.senders[e], &r[fe..fe + l]);
                add_rows(&mut dnodes, edges.receivers[e], &r[fe + l..]);
            }
            dfeat
        };
        let dmesh = edge_pass(
            &graph.mesh_edges,
            d.mesh_edges,
            l,
            &self.mesh_edge,
            &cache.mesh_edge,
            &mut grad.mesh_edge,
        );
        let dworld = edge_pass(
            &graph.world_edges,
            d.world_edges,
            2 * l,
            &self.world_edge,
            &cache.world_edge,
            &mut grad.world_edge,
        );
        Latents {
            nodes: dnodes,
            mesh_edges: dmesh,
            world_edges: dworld,
        }
    }
}

impl Network {
    pub fn new<R: Rng + ?Sized>(
        config: NetConfig,
        node_in: usize,
        mesh_edge_in: usize,
        world_edge_in: usize,
        output: usize,
        rng: &mut R,
    ) -> Network {
        let (l, h) = (config.latent, config.hidden_layers);
        let node_encoder = Mlp::new(node_in, l, h, l, true, rng);
        let mesh_edge_encoder = Mlp::new(mesh_edge_in, l, h, l, true, rng);
        let world_edge_encoder = Mlp::new(world_edge_in, l, h, l, true, rng);
        let blocks = (0..config.blocks).map(|_| Block::new(&config, rng)).collect();
        let decoder = Mlp::new(l, l, h, output, false, rng);
        Network {
            config,
            node_encoder,
            mesh_edge_encoder,
            world_edge_encoder,
            blocks,
            decoder,
        }
    }

    pub fn zeros_like(&self) -> Network {
        Network {
            config: self.config,
            node_encoder: self.node_encoder.zeros_like(),
            mesh_edge_encoder: self.mesh_edge_encoder.zeros_like(),
            world_edge_encoder: self.world_edge_encoder.zeros_like(),
            blocks: self.blocks.iter().map(Block::zeros_like).collect(),
            decoder: self.decoder.zeros_like(),
        }
    }

    pub fn output_width(&self) -> usize {
        self.decoder.output_width()
    }

    /// Encodes the (already normalized) graph features into latents.
    pub fn encode(&self, graph: &MultiGraph) -> Latents {
        Latents {
            nodes: self.node_encoder.forward(&graph.node_features).0,
            mesh_edges: self.mesh_edge_encoder.forward(&graph.mesh_edges.features).0,
            world_edges: self.world_edge_encoder.forward(&graph.world_edges.features).0,
        }
    }

    /// Per-node decoder outputs for a graph with normalized features.
    pub fn forward(&self, graph: &MultiGraph) -> (Matrix, NetworkCache) {
        let (nodes, nc) = self.node_encoder.forward(&graph.node_features);
        let (mesh_edges, mc) = self.mesh_edge_encoder.forward(&graph.mesh_edges.features);
        let (world_edges, wc) = self.world_edge_encoder.forward(&graph.world_edges.features);
        let mut x = Latents {
            nodes,
            mesh_edges,
            world_edges,
        };
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (next, c) = b.forward_cached(graph, &x);
            blocks.push(c);
            x = next;
        }
        let (out, dc) = self.decoder.forward(&x.nodes);
        (
            out,
            NetworkCache {
                node_encoder: nc,
                mesh_edge_encoder: mc,
                world_edge_encoder: wc,
                blocks,
                decoder: dc,
            },
        )
    }

    pub fn predict(&self, graph: &MultiGraph) -> Matrix {
        self.forward(graph).0
    }

    /// Accumulates `dL/dθ` into `grad` given `dL/d(output)`.
    pub fn backward(&self, graph: &MultiGraph, cache: &NetworkCache, dout: &Matrix, grad: &mut Network) {
        let dnodes = self.decoder.backward(&cache.decoder, dout, &mut grad.decoder);
        let l = self.config.latent;
        let mut d = Latents {
            nodes: dnodes,
            mesh_edges: Matrix::zeros(graph.mesh_edges.len(), l),
            world_edges: Matrix::zeros(graph.world_edges.len(), l),
        };
        for (k, b) in self.blocks.iter().enumerate().rev() {
            d = b.backward(graph, &cache.blocks[k], d, &mut grad.blocks[k]);
        }
        self.node_encoder
            .backward(&cache.node_encoder, &d.nodes, &mut grad.node_encoder);
        self.mesh_edge_encoder
            .backward(&cache.mesh_edge_encoder, &d.mesh_edges, &mut grad.mesh_edge_encoder);
        self.world_edge_encoder
            .backward(&cache.world_edge_encoder, &d.world_edges, &mut grad.world_edge_encoder);
    }

    fn mlps(&self) -> Vec<(String, &Mlp)> {
        let mut out = vec![
            ("encoder.node".to_string(), &self.node_encoder),
            ("encoder.mesh_edge".to_string(), &self.mesh_edge_encoder),
            ("encoder.world_edge".to_string(), &self.world_edge_encoder),
        ];
        for (k, b) in self.blocks.iter().enumerate() {
            out.push((format!("block{k}.mesh_edge"), &b.mesh_edge));
            out.push((format!("block{k}.world_edge"), &b.world_edge));
            out.push((format!("block{k}.node"), &b.node));
        }
        out.push(("decoder".to_string(), &self.decoder));
        out
    }

    fn mlps_mut(&mut self) -> Vec<&mut Mlp> {
        let mut out = vec![
            &mut self.node_encoder,
            &mut self.mesh_edge_encoder,
            &mut self.world_edge_encoder,
        ];
        for b in &mut self.blocks {
            out.push(&mut b.mesh_edge);
            out.push(&mut b.world_edge);
            out.push(&mut b.node);
        }
        out.push(&mut self.decoder);
        out
    }

    /// All parameter tensors in declaration order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.mlps().into_iter().flat_map(|(_, m)| m.tensors()).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.mlps_mut().into_iter().flat_map(|m| m.tensors_mut()).collect()
    }

    /// `(name, shape)` per tensor, aligned with [`Network::tensors`].
    pub fn tensor_specs(&self) -> Vec<(String, Vec<usize>)> {
        self.mlps()
            .into_iter()
            .flat_map(|(prefix, m)| {
                m.tensor_specs()
                    .into_iter()
                    .map(move |(n, s)| (format!("{prefix}.{n}"), s))
            })
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Builds a network of the given sizes and copies `values` into its
    /// tensors, checking every shape.
    pub fn from_tensors(
        config: NetConfig,
        widths: [usize; 4],
        specs: &[(String, Vec<usize>)],
        values: Vec<Vec<f64>>,
    ) -> Result<Network, String> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = Network::new(config, widths[0], widths[1], widths[2], widths[3], &mut rng);
        let expected = net.tensor_specs();
        if expected.as_slice() != specs {
            return Err("tensor names or shapes do not match the network layout".into());
        }
        for (t, v) in net.tensors_mut().into_iter().zip(values) {
            if t.len() != v.len() {
                return Err("tensor data length does not match its shape".into());
            }
            t.copy_from_slice(&v);
        }
        Ok(net)
    }
}
