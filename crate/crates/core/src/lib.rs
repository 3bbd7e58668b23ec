pub mod cloud_io;
pub mod code_space;
pub mod error;
pub mod estimators;
pub mod matrix;
pub mod measure;
pub mod pressure;
pub mod rng;
pub mod sampler;

pub use error::{Error, Result};
