//! Object pose from 2D-3D correspondences: DLT PnP, Gauss-Newton refinement
//! and a RANSAC wrapper.

mod pnp;
mod ransac;
mod refine;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::geometry::{CameraIntrinsics, Pixel, RigidTransform};
use crate::{Error, Result};

pub use pnp::pnp_dlt;
pub use ransac::ransac_pnp;
pub use refine::{refine_gauss_newton, RefineOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence2D3D {
    pub pixel: Pixel,
    pub point: Vector3<f64>,
    pub confidence: f64,
}

impl Correspondence2D3D {
    pub fn new(pixel: Pixel, point: Vector3<f64>) -> Self {
        Self { pixel, point, confidence: 1.0 }
    }

    pub fn is_finite(&self) -> bool {
        self.pixel.is_finite() && self.point.iter().all(|x| x.is_finite()) && self.confidence.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PnPResult {
    /// Camera-from-object pose.
    pub pose: RigidTransform,
    pub inlier_indices: Vec<usize>,
    /// Mean pixel error over the inliers.
    pub mean_reproj_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RansacConfig {
    pub iterations: usize,
    pub inlier_threshold_px: f64,
    pub min_inliers: usize,
    pub sample_size: usize,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            inlier_threshold_px: 3.0,
            min_inliers: 8,
            sample_size: 6,
            seed: 0,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_size < 6 {
            return Err(Error::InvalidConfig("sample_size must be at least 6".into()));
        }
        if self.iterations < 1 {
            return Err(Error::InvalidConfig("iterations must be at least 1".into()));
        }
        if !(self.inlier_threshold_px > 0.0 && self.inlier_threshold_px.is_finite()) {
            return Err(Error::InvalidConfig("inlier_threshold_px must be positive".into()));
        }
        Ok(())
    }
}

/// Pixel distance between each observation and the projection of its point;
/// infinite when the point is not in front of the camera.
pub fn reprojection_errors(pose: &RigidTransform, corrs: &[Correspondence2D3D], k: &CameraIntrinsics) -> Vec<f64> {
    corrs
        .iter()
        .map(|c| match k.project_camera_point(&pose.transform_point(&c.point)) {
            Some(px) => px.distance(&c.pixel),
            None => f64::INFINITY,
        })
        .collect()
}
