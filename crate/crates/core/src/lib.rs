//! Cascaded-chunk vision transformer built on a small reverse-mode autodiff engine.

pub mod analytics;
pub mod autograd;
pub mod ccffn;
pub mod cga;
pub mod error;
pub mod kernels;
pub mod model;
pub mod nn;
pub mod ops;
pub mod rng;
pub mod tensor;
pub mod train;

pub use autograd::{no_grad, Var};
pub use error::{CheckpointError, Error, Result};
pub use model::{CViTModel, ModelConfig};
pub use rng::RngState;
pub use tensor::{Scalar, Tensor};
