//! Minimal reverse-mode automatic differentiation over dense matrices.
//!
//! Build a computation on a [`Tape`] through the [`Graph`] trait, then call
//! [`Tape::backward`] on a scalar node. The same model code runs on
//! [`Eval`] for gradient-free inference.
//!
//! ```
//! use fewfit_core::autodiff::{Graph, Tape, Tensor};
//!
//! let a = Tensor::scalar(2.0f64);
//! let b = Tensor::scalar(3.0f64);
//! let mut tape = Tape::new();
//! let (va, vb) = (tape.leaf(&a), tape.leaf(&b));
//! let f = tape.mul(va, vb).unwrap();
//! let grads = tape.backward(f).unwrap();
//! assert_eq!(grads.wrt(va).data(), &[3.0]);
//! assert_eq!(grads.wrt(vb).data(), &[2.0]);
//! ```
//!
//! Subgradients of max-style reductions go to a single winner, the lowest
//! index on ties. Broadcasting is explicit through [`Graph::broadcast`].

mod gradcheck;
mod graph;
pub mod kernels;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_many, REL_FLOOR};
pub use graph::{Eval, Graph, Op, Segments, Var};
pub use tape::{Gradients, Tape};
pub use tensor::{FloatOps, Scalar, Tensor};
