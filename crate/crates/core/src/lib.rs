pub mod attack;
pub mod backbone;
pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod nn;
pub mod pretext;
pub mod quality;
pub mod scanio;
pub mod slameval;

pub use error::{Error, Result};
