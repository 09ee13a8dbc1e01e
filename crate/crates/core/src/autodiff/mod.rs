//! Minimal reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation as it is evaluated; [`Graph::backward`]
//! then walks it in reverse and accumulates gradients into the leaves that
//! were created with `requires_grad`. The same operation set runs in `f32`
//! (training) and `f64` (gradient checking).

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{gradcheck, gradcheck_blocks, GradcheckReport};
pub use graph::{AutodiffError, Graph, Result, Var};
pub use tensor::{Real, Tensor};
