//! Minimal f64 neural-network toolkit: tensors, a differentiable tape,
//! parameter storage, Adam and a finite-difference gradient checker.

mod graph;
mod optim;
mod params;
mod tensor;

pub mod gradcheck;

pub use graph::{elu, sigmoid, ConvGeom, Graph, Var};
pub use optim::Adam;
pub use params::{init_normal, Gradients, ParamId, ParamSet};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
