pub mod baselines;
pub mod channel;
pub mod codec;
pub mod error;
pub mod harness;
pub mod nn;
pub mod separator;
pub mod trainer;

pub use error::{Error, Result};
