pub mod bloch;
pub mod dictionary;
pub mod error;
pub mod phantom;
pub mod fingerprint;
pub mod rng;
pub mod sequence;
pub mod zoom;

pub use error::{Error, Result};
