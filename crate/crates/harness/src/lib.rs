//! Training, evaluation, ablation and gradient checking for the region-based
//! relationship model on the synthetic corpus.

pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod train;

pub use config::{Config, Preset};
pub use error::{HarnessError, Result};
