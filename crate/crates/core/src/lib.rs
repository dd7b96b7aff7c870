//! Depth field-of-view extension: propagate a small-FoV LiDAR depth map to
//! the full camera frame stage by stage, score candidate depth hypotheses,
//! evaluate self-supervision losses and benchmark the result.

pub mod cli;
pub mod error;
pub mod geometry;
pub mod io_data;
pub mod losses;
pub mod metrics;
pub mod pdc;
pub mod propagation;
pub mod raster;
pub mod resize;

pub use error::{Error, Result};
