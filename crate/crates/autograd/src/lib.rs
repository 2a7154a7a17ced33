//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Operations evaluate eagerly on a [`Graph`] tape; [`Graph::backward`]
//! replays the tape in reverse. Everything runs in double precision so
//! finite-difference audits are meaningful.

pub mod gradcheck;
mod graph;
pub mod init;
pub mod ops;
pub mod optim;
mod params;
mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use ops::conv::BatchStats;
pub use ops::deform::LevelLayout;
pub use ops::elementwise::{inverse_sigmoid_f64, sigmoid_f64};
pub use params::ParamStore;
pub use tensor::Tensor;
