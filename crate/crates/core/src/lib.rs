//! Region-based relationship modeling for generalized referring expression
//! segmentation, at desk scale.

pub mod error;
pub mod numcore;

pub use error::{GresError, Result};
pub mod encoders;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod raster;
pub mod rela;
