pub mod attention;
pub mod autograd;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod embed;
pub mod error;
pub mod eval;
pub mod kernel;
pub mod loss;
pub mod model;
pub mod msn;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, ModelError, Result};
