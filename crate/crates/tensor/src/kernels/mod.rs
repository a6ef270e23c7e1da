//! Raw slice kernels behind the differentiable ops.

pub mod conv;
pub mod pool;

pub use conv::{conv3d_backward, conv3d_forward, ConvGeometry};
pub use pool::{maxpool3d_forward, PoolGeometry};
