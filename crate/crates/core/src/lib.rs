pub mod bounds;
pub mod error;
pub mod estimation;
pub mod exec;
pub mod information;
pub mod numerics;
pub mod probes;
pub mod random;
pub mod reduction;
pub mod strategy;

pub use error::{Error, Result};
