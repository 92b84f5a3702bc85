//! Dense tensors and a tape-based reverse-mode differentiation engine.
//!
//! The primitive set is closed: matrix products, elementwise arithmetic,
//! activations, row softmax, layer norm, positional-table addition,
//! row norms and cosine similarity, clamped log, reductions, row
//! gather/interleave, and fused multi-head attention. Reductions run in a
//! fixed sequential order so repeated evaluations are bit-identical.

mod backward;
pub mod check;
mod error;
mod graph;
mod params;
mod scalar;
mod tensor;

pub use check::{finite_diff_check, finite_diff_check_params};
pub use error::{Result, TensorError};
pub use graph::{Diagnostics, Graph, Var};
pub use params::{Param, ParamId, ParamStore};
pub use scalar::{gemm, Layout, Scalar};
pub use tensor::Tensor;
