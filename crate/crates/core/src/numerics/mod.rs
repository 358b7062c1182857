//! Dense tensors, reverse-mode differentiation, seeded randomness and the
//! differentiable primitives the model is assembled from.

pub mod gradcheck;
pub mod nn;
pub mod params;
pub mod rng;
pub mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use params::{AdamConfig, Param, ParamId, ParamStore};
pub use rng::Rng;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
