pub mod analysis;
pub mod bitnoise;
pub mod device;
pub mod error;
pub mod harness;
pub mod nn;
pub mod quant;
pub mod rng;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
