pub mod autodiff;
pub mod cli;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod knn;
pub mod sampler;
pub mod train;

pub use error::{Error, Result};
