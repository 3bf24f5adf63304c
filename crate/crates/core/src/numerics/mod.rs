//! Dense tensors, reverse-mode differentiation and parameter storage.

mod graph;
mod params;
pub mod rng;
mod tensor;

pub use graph::{gelu, gelu_grad, sigmoid, CustomBackward, Graph, ReduceMode, Var, KERNEL_TAPS};
pub use params::{trunc_normal, uniform, Binder, ParamSet, Parameter};
pub use rng::Rng;
pub use tensor::Tensor;
