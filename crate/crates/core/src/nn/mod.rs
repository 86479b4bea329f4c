//! Minimal reverse-mode differentiation engine in double precision.

mod adam;
mod graph;
pub mod ops;
mod params;
mod tensor;

pub use adam::Adam;
pub use graph::{Gradients, Graph, Var};
pub use params::ParamStore;
pub use tensor::Tensor;
