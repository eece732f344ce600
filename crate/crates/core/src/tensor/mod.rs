//! Minimal differentiable numeric core.
//!
//! Dense `f64` arrays, a tape of catalog operators with hand-written
//! backward passes, named parameters, and a finite-difference checker.

mod array;
pub mod attention;
pub mod conv;
pub mod gradcheck;
mod graph;
pub mod ops;
mod param;
pub mod sample;

pub use array::NdArray;
pub use graph::{Backward, Grads, Graph, Mode, Var};
pub use param::{ParamStore, Parameter, PARAM_MAGIC};
