pub mod compose;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod imaging;
pub mod neural;
pub mod rng;
pub mod transforms;
pub mod world;

pub use error::{Error, Result};
