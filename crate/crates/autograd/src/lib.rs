//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] records operations as they execute; [`Graph::backward`] then
//! sweeps the tape once in reverse. Operations cover what convolutional
//! image-registration networks need: convolution, linear layers, pointwise
//! activations, instance normalization, reductions, linear upsampling, grid
//! sampling and affine coordinate maps.

mod conv;
mod error;
mod gradcheck;
mod graph;
mod interp;
mod optim;
mod param;
mod real;
mod tensor;

pub use error::{AutogradError, Result};
pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use graph::{Activation, Graph, Reduction, Var};
pub use optim::{Adam, Moments};
pub use param::Parameter;
pub use real::Real;
pub use tensor::Tensor;
