pub mod baseline_rx;
pub mod channel;
pub mod checkpoint;
pub mod error;
pub mod harness;
pub mod ldpc;
pub mod link;
pub mod modem;
pub mod neural_rx;
pub mod seed;
pub mod trainer;

pub use error::{Error, Result};
