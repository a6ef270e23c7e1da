//! Differentiable operations, exposed as methods on [`Var`](crate::Var).

mod basic;
mod conv;
mod loss;
mod norm;
mod pool;
mod softargmax;

pub use basic::concat;
pub use norm::{NormMode, RunningStats};
