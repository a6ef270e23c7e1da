pub mod error;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod sampler;
pub mod synthdata;
pub mod training;

pub use error::{Error, Result};
