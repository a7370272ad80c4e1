//! Dense MLPs, layer normalization and message passing with hand-written
//! reverse-mode gradients. All arithmetic is `f64`.

pub mod gradcheck;
mod matrix;
mod mlp;
mod network;

pub use gradcheck::{gradient_check, GradCheck};
pub use matrix::{gemm, Matrix};
pub use mlp::{LayerNorm, Linear, Mlp, MlpCache, LAYER_NORM_EPS};
pub use network::{Block, Latents, NetConfig, Network, NetworkCache};
