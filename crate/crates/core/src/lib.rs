pub mod config;
pub mod datamodel;
pub mod error;
pub mod evaluation;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod params;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
