//! One-stream single-object tracking for LiDAR point clouds.
//!
//! The template crop and the search region are encoded jointly by a stack of
//! template-aware attention layers, aggregated across scales by feature
//! propagation, augmented with per-point segmentation scores and decoded by a
//! bird's-eye-view detection head.

pub mod checks;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod losses;
pub mod model;
pub mod points;
pub mod tensor;
pub mod tracker;
pub mod train;

pub use error::{Error, Result};
