pub mod bound;
pub mod channel;
pub mod codec;
pub mod datadetect;
pub mod error;
pub mod harness;
pub mod jdce;
pub mod numerics;
pub mod risdesign;
pub mod transmitter;

pub use error::{Error, Result};
