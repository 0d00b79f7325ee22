//! Metric scale recovery for monocular 3D reconstructions.
//!
//! A reconstruction from a single moving camera is correct only up to an
//! unknown global scale. This crate recovers that scale (millimeters per
//! reconstruction unit) from the objects in the scene:
//!
//! 1. per-frame instance clouds are merged into object clouds ([`merging`]),
//! 2. each object gets an upright oriented box and per-axis confidence ([`dimensions`]),
//! 3. plausible dimensions are scored against per-category size mixtures from a
//!    [`metric_tree`] and the scale is found by grid search ([`scale`]).
//!
//! [`pipeline`] runs these stages end to end on a scene [`bundle`] and
//! produces a versioned report. [`simgen`] generates synthetic scenes with
//! known scale for validation.

pub mod bundle;
pub mod dimensions;
pub mod error;
pub mod geometry;
pub mod json;
pub mod merging;
pub mod metric_tree;
pub mod pipeline;
pub mod registry;
pub mod scale;
pub mod simgen;

pub use error::{Error, Result};
