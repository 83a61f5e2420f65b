//! Minimal dense-tensor math with reverse-mode differentiation.
//!
//! Everything is `f64` and row-major. The op set is exactly what a causal
//! convolutional encoder and a masked contrastive loss need: matmul, add,
//! mul, relu, exp, log, reductions, concat/slice, causal dilated 1-D
//! convolution, layer normalization, row L2-normalization and a masked
//! log-sum-exp.
//!
//! ```
//! use ncl_autograd::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.param(Tensor::scalar(3.0));
//! let y = g.mul(x, x).unwrap();
//! let grads = g.backward(y).unwrap();
//! assert_eq!(grads.get(x).unwrap().item().unwrap(), 6.0);
//! ```

mod adam;
mod error;
mod gradcheck;
mod graph;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use error::{AutogradError, Result};
pub use gradcheck::{gradient_check, gradient_check_many, relative_error, REL_ERROR_FLOOR};
pub use graph::{matmul_raw, Gradients, Graph, NodeId, LAYER_NORM_EPS};
pub use tensor::Tensor;
