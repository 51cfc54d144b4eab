#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dataset;
pub mod detection;
pub mod error;
pub mod geometry;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod prompt;
pub mod raster;
pub mod training;
pub mod viz;
pub mod zoo;

pub use error::{Error, Result};
