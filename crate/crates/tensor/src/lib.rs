//! Dense tensors with tape-based reverse-mode differentiation and the
//! convolution, pooling, normalisation and loss kernels used by the gesture
//! models.

mod error;
pub mod exec;
pub mod gradcheck;
mod graph;
pub mod kernels;
mod ops;
mod param;
mod scalar;
mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::{gradcheck, GradcheckReport};
pub use graph::{Graph, NodeId, Var};
pub use ops::{concat, NormMode, RunningStats};
pub use param::{ParamId, ParamKind, ParamStore, Parameter};
pub use scalar::Scalar;
pub use tensor::{flat_index, strides, Tensor};
