//! Minimal differentiable compute substrate: dense NCHW tensors, a
//! reverse-mode tape over the operations the localization models need,
//! reparameterized Gaussian nodes and the Adam optimizer.

pub mod adam;
pub mod checkpoint;
pub mod conv;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod par;
pub mod params;
pub mod real;
pub mod stochastic;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::Checkpoint;
pub use error::{NnError, Result};
pub use graph::{Gradients, Graph, Var};
pub use layers::{Conv2dLayer, ConvLstmCell, ConvTranspose2dLayer, LinearLayer, LstmState, Mlp};
pub use par::Parallelism;
pub use params::{ParamGrads, ParamId, ParamStore};
pub use real::Real;
pub use tensor::Tensor;
