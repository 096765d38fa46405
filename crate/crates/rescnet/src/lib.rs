pub mod checkpoint;
pub mod config;
pub mod conv;
pub mod dataset;
pub mod engine;
pub mod error;
pub mod features;
pub mod filter_bank;
pub mod lda;
pub mod linalg;
pub mod rng;

pub use error::{Error, Result};
