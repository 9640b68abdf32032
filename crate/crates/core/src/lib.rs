pub mod codec;
pub mod collab;
pub mod config;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod nets;
pub mod pgm;
pub mod scene;
pub mod tensor;

pub use error::{Error, Result};
