//! Minimal reverse-mode automatic differentiation: the op set the model
//! graph needs, a named parameter store, Adam, and the tensor container.

mod adam;
pub mod checkpoint;
mod graph;
mod params;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamReport};
pub use graph::{log_sigmoid, sigmoid, Graph, ParamGrads, Var};
pub use params::{ParamEntry, ParamId, ParamStore};
pub use tensor::Tensor;
