//! Dense tensors, reverse-mode gradients and the layers the models need.

pub mod adam;
pub mod checkpoint;
pub mod conv;
mod gemm;
pub mod gradcheck;
pub mod loss;
pub mod params;
pub mod routing;
pub mod tape;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use conv::conv2d_forward;
pub use gradcheck::grad_check;
pub use params::ParamSet;
pub use routing::{dynamic_routing, squash};
pub use tape::{Gradients, Tape, Var, NORM_EPS};
pub use tensor::Tensor;
