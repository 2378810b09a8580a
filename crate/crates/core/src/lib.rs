//! Numeric substrate for fuselang: dense tensors, a reverse-mode tape with
//! the convolution, pooling and recurrent primitives the model needs, named
//! parameter storage, checkpoints and a finite-difference gradient checker.

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod init;
pub mod kernels;
pub mod params;
pub mod rng;
pub mod tensor;

pub use error::{CoreError, Result};
pub use gradcheck::{grad_check, grad_check_params, GradCheckOptions, GradCheckReport};
pub use graph::{CustomOp, Gradients, Graph, Var};
pub use params::{Bound, Parameter, ParameterStore};
pub use rng::stream_rng;
pub use tensor::Tensor;
