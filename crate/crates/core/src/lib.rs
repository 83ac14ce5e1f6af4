pub mod attention;
pub mod context;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod features;
pub mod harness;
pub mod nn;
pub mod numcore;
pub mod prosody;

#[cfg(test)]
mod oracles;

pub use error::{Error, Result};
