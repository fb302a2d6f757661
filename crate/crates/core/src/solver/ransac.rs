use rand::seq::index::sample;
use rayon::prelude::*;

use super::{pnp_dlt, refine_gauss_newton, reprojection_errors, Correspondence2D3D, PnPResult, RansacConfig};
use crate::geometry::{CameraIntrinsics, RigidTransform};
use crate::rng::{stream, StreamKind};
use crate::{Error, Result};

const REFINE_ITERS: usize = 30;
const REFINE_TOL: f64 = 1e-12;

struct Hypothesis {
    pose: RigidTransform,
    inliers: usize,
    mean_error: f64,
}

fn score(pose: &RigidTransform, corrs: &[Correspondence2D3D], k: &CameraIntrinsics, threshold: f64) -> (Vec<usize>, f64) {
    let errors = reprojection_errors(pose, corrs, k);
    let inliers: Vec<usize> = (0..corrs.len()).filter(|&i| errors[i] < threshold).collect();
    let mean = if inliers.is_empty() {
        f64::INFINITY
    } else {
        inliers.iter().map(|&i| errors[i]).sum::<f64>() / inliers.len() as f64
    };
    (inliers, mean)
}

fn better(a: &Hypothesis, b: &Hypothesis) -> bool {
    a.inliers > b.inliers || (a.inliers == b.inliers && a.mean_error < b.mean_error)
}

/// RANSAC over DLT minimal samples, followed by refinement on the inliers.
///
/// Hypothesis `i` samples from the stream keyed by `(seed, i)`; hypotheses
/// run in parallel and are reduced in index order.
pub fn ransac_pnp(corrs: &[Correspondence2D3D], k: &CameraIntrinsics, cfg: &RansacConfig) -> Result<PnPResult> {
    cfg.validate()?;
    if corrs.len() < cfg.sample_size {
        return Err(Error::InsufficientInliers { found: corrs.len(), required: cfg.sample_size });
    }
    let threshold = cfg.inlier_threshold_px;
    let hypotheses: Vec<Option<Hypothesis>> = (0..cfg.iterations)
        .into_par_iter()
        .map(|it| {
            let mut rng = stream(cfg.seed, StreamKind::Ransac, it as u64);
            let subset: Vec<Correspondence2D3D> = sample(&mut rng, corrs.len(), cfg.sample_size)
                .into_iter()
                .map(|i| corrs[i])
                .collect();
            let pose = pnp_dlt(&subset, k).ok()?;
            let (inliers, mean_error) = score(&pose, corrs, k, threshold);
            Some(Hypothesis { pose, inliers: inliers.len(), mean_error })
        })
        .collect();
    let best = hypotheses
        .into_iter()
        .flatten()
        .reduce(|best, h| if better(&h, &best) { h } else { best })
        .ok_or(Error::Degenerate("no RANSAC sample produced a pose"))?;
    if best.inliers < cfg.min_inliers {
        return Err(Error::InsufficientInliers { found: best.inliers, required: cfg.min_inliers });
    }

    let mut current = Hypothesis { ..best };
    let (mut inliers, _) = score(&current.pose, corrs, k, threshold);
    for _ in 0..2 {
        let subset: Vec<Correspondence2D3D> = inliers.iter().map(|&i| corrs[i]).collect();
        let refined = refine_gauss_newton(&current.pose, &subset, k, REFINE_ITERS, REFINE_TOL);
        let (next_inliers, mean_error) = score(&refined.pose, corrs, k, threshold);
        let candidate = Hypothesis { pose: refined.pose, inliers: next_inliers.len(), mean_error };
        if candidate.inliers < current.inliers {
            break;
        }
        current = candidate;
        inliers = next_inliers;
    }
    if inliers.len() < cfg.min_inliers {
        return Err(Error::InsufficientInliers { found: inliers.len(), required: cfg.min_inliers });
    }
    Ok(PnPResult {
        pose: current.pose,
        inlier_indices: inliers,
        mean_reproj_error: current.mean_error,
    })
}
