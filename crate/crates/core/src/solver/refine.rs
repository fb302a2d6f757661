use nalgebra::{Matrix2x3, Matrix6, SMatrix, UnitQuaternion, Vector3, Vector6};

use super::Correspondence2D3D;
use crate::geometry::{skew, CameraIntrinsics, RigidTransform, DEPTH_EPSILON};

const MAX_HALVINGS: usize = 30;
const SINGULAR_RATIO: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct RefineOutcome {
    pub pose: RigidTransform,
    /// Sum of squared pixel residuals: the initial value, then one entry per
    /// accepted step.
    pub costs: Vec<f64>,
    pub iterations: usize,
    /// Set when the normal equations could not be solved; `pose` is then the
    /// last accepted estimate.
    pub singular: bool,
}

impl RefineOutcome {
    pub fn final_cost(&self) -> f64 {
        *self.costs.last().unwrap_or(&f64::INFINITY)
    }
}

fn cost(pose: &RigidTransform, corrs: &[Correspondence2D3D], k: &CameraIntrinsics) -> f64 {
    corrs
        .iter()
        .map(|c| match k.project_camera_point(&pose.transform_point(&c.point)) {
            Some(px) => (px.u - c.pixel.u).powi(2) + (px.v - c.pixel.v).powi(2),
            None => f64::INFINITY,
        })
        .sum()
}

/// `exp(delta) * pose` with `delta = [omega, dt]` acting on the camera frame.
fn apply(pose: &RigidTransform, delta: &Vector6<f64>) -> RigidTransform {
    let dr = UnitQuaternion::from_scaled_axis(Vector3::new(delta[0], delta[1], delta[2]));
    let dt = Vector3::new(delta[3], delta[4], delta[5]);
    RigidTransform::new(dr * pose.rotation(), dr * pose.translation() + dt)
}

/// Gauss-Newton on the pixel reprojection error with step halving, so the
/// returned cost never exceeds the initial one.
pub fn refine_gauss_newton(
    init: &RigidTransform,
    corrs: &[Correspondence2D3D],
    k: &CameraIntrinsics,
    max_iters: usize,
    tol: f64,
) -> RefineOutcome {
    let mut pose = *init;
    let mut current = cost(&pose, corrs, k);
    let mut out = RefineOutcome {
        pose,
        costs: vec![current],
        iterations: 0,
        singular: false,
    };
    if !current.is_finite() {
        return out;
    }
    for it in 0..max_iters {
        out.iterations = it + 1;
        let mut jtj = Matrix6::zeros();
        let mut jtr = Vector6::zeros();
        for c in corrs {
            let xc = pose.transform_point(&c.point);
            if xc.z <= DEPTH_EPSILON {
                continue;
            }
            let iz = 1.0 / xc.z;
            let r = nalgebra::Vector2::new(
                k.fx * xc.x * iz + k.cx - c.pixel.u,
                k.fy * xc.y * iz + k.cy - c.pixel.v,
            );
            let dproj = Matrix2x3::new(
                k.fx * iz, 0.0, -k.fx * xc.x * iz * iz,
                0.0, k.fy * iz, -k.fy * xc.y * iz * iz,
            );
            let mut j = SMatrix::<f64, 2, 6>::zeros();
            j.fixed_view_mut::<2, 3>(0, 0).copy_from(&(dproj * -skew(&xc)));
            j.fixed_view_mut::<2, 3>(0, 3).copy_from(&dproj);
            jtj += j.transpose() * j;
            jtr += j.transpose() * r;
        }
        let Some(chol) = jtj.cholesky() else {
            out.singular = true;
            break;
        };
        let diag = chol.l_dirty().diagonal();
        if diag.min() <= SINGULAR_RATIO * diag.max() {
            out.singular = true;
            break;
        }
        let mut step = -chol.solve(&jtr);
        if !step.iter().all(|x| x.is_finite()) {
            out.singular = true;
            break;
        }
        if step.norm() < tol {
            break;
        }
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let candidate = apply(&pose, &step);
            let c = cost(&candidate, corrs, k);
            if c <= current {
                accepted = Some((candidate, c));
                break;
            }
            step *= 0.5;
        }
        let Some((next, c)) = accepted else { break };
        let small = step.norm() < tol;
        pose = next;
        current = c;
        out.costs.push(current);
        if small {
            break;
        }
    }
    out.pose = pose;
    out
}
