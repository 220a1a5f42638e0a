pub mod bias;
pub mod border;
pub mod catalog;
pub mod compositor;
pub mod config;
pub mod error;
pub mod mask;
pub mod metrics;
pub mod mock;
pub mod pipeline;
pub mod planner;
pub mod protocol;
pub mod raster;
pub mod report;
pub mod seed;
pub mod synthetic;

pub use error::{Error, Result};
