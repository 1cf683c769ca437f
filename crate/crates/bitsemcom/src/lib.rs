pub mod error;
pub mod rng;
pub mod tensor;
mod conv;
pub mod tape;
pub mod optim;
pub mod modem;
pub mod data;
pub mod nn;
pub mod codec;
pub mod mapper;
pub mod model;
pub mod checkpoint;
pub mod metrics;
pub mod train;
pub mod harness;

pub use error::{Error, Result};
