pub mod algo;
pub mod checkpoint;
pub mod config;
pub mod env;
pub mod error;
pub mod eval;
pub mod nn;
pub mod obs;
pub mod par;
pub mod reward;
pub mod schedule;
pub mod train;

pub use error::{MasqError, Result};
