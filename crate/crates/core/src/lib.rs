//! One-shot object pose estimation on sparse object maps.
//!
//! The pipeline builds a point map of an object from posed views, matches
//! query keypoint descriptors directly against the map with a stack of
//! aggregation / self / cross attention groups, and recovers the object pose
//! with a RANSAC-wrapped PnP solver. A deterministic synthetic scene generator
//! provides ground truth for every stage.

pub mod bench;
pub mod error;
pub mod geometry;
pub mod matcher;
pub mod rng;
pub mod scene;
pub mod sfm;
pub mod solver;

pub use error::{Error, Result};

/// A keypoint descriptor. Unit-norm everywhere it is produced by this crate.
pub type Descriptor = Vec<f64>;
