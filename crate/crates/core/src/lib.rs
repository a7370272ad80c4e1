//! Learned mesh-based physics simulation.
//!
//! The crate covers the whole pipeline at desk scale:
//!
//! - [`mesh`]: simulation meshes, validation, barycentric transfer
//! - [`graph`]: domain schemas and multigraph feature encoding
//! - [`nn`]: dense MLPs, layer norm and message passing with hand-written
//!   reverse-mode gradients
//! - [`model`]: normalizers, next-step prediction and integration
//! - [`remesh`] and [`sizing`]: sizing-field driven local remeshing and
//!   sizing estimation
//! - [`train`]: training noise, loss, Adam, training loop
//! - [`synth`]: classical solvers producing ground-truth trajectories
//! - [`rollout`]: iterative rollouts and RMSE metrics

pub mod error;
pub mod graph;
pub mod linalg;
pub mod mesh;
pub mod model;
pub mod nn;
pub mod remesh;
pub mod rollout;
pub mod sizing;
pub mod synth;
pub mod train;
pub mod trajectory;

pub use error::{Error, Result};
pub use graph::{DomainSchema, MultiGraph};
pub use mesh::{Cells, NodeRecord, NodeType, SimMesh};
pub use model::Model;
pub use sizing::SizingField;
pub use trajectory::Trajectory;
