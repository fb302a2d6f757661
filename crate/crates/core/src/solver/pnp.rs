use nalgebra::{DMatrix, Matrix3, Matrix3x4, Matrix4, Vector3, Vector4};

use super::Correspondence2D3D;
use crate::geometry::{CameraIntrinsics, RigidTransform};
use crate::{Error, Result};

const RANK_TOLERANCE: f64 = 1e-9;

/// Centroid and isotropic scale taking the points to mean distance `sqrt(3)`.
fn point_normalization(points: &[Vector3<f64>]) -> Option<Matrix4<f64>> {
    let n = points.len() as f64;
    let c = points.iter().fold(Vector3::zeros(), |a, p| a + p) / n;
    let mean = points.iter().map(|p| (p - c).norm()).sum::<f64>() / n;
    if !(mean > 0.0 && mean.is_finite()) {
        return None;
    }
    let s = 3f64.sqrt() / mean;
    let mut t = Matrix4::identity() * s;
    t[(3, 3)] = 1.0;
    t.fixed_view_mut::<3, 1>(0, 3).copy_from(&(-c * s));
    Some(t)
}

/// Linear pose from at least six correspondences.
///
/// Solves for the 3x4 matrix `P` with `x ~ P X` in normalized image
/// coordinates, then projects its left block onto the nearest rotation.
pub fn pnp_dlt(corrs: &[Correspondence2D3D], k: &CameraIntrinsics) -> Result<RigidTransform> {
    if corrs.len() < 6 {
        return Err(Error::InsufficientInliers { found: corrs.len(), required: 6 });
    }
    if corrs.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite { layer: "pnp correspondences".into() });
    }
    let points: Vec<Vector3<f64>> = corrs.iter().map(|c| c.point).collect();
    let t3 = point_normalization(&points).ok_or(Error::Degenerate("pnp points coincide"))?;

    let mut a = DMatrix::zeros(2 * corrs.len(), 12);
    for (i, c) in corrs.iter().enumerate() {
        let x = k.normalize(&c.pixel);
        let p = t3 * Vector4::new(c.point.x, c.point.y, c.point.z, 1.0);
        for j in 0..4 {
            a[(2 * i, j)] = p[j];
            a[(2 * i, 8 + j)] = -x.x * p[j];
            a[(2 * i + 1, 4 + j)] = p[j];
            a[(2 * i + 1, 8 + j)] = -x.y * p[j];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(Error::Degenerate("pnp svd"))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let sv = |r: usize| svd.singular_values[order[r]];
    if sv(10) <= RANK_TOLERANCE * sv(0) {
        return Err(Error::Degenerate("pnp system is rank deficient"));
    }
    let h = v_t.row(order[11]);
    let mut p = Matrix3x4::from_fn(|r, c| h[4 * r + c]) * t3;

    let in_front = points
        .iter()
        .filter(|x| (p.fixed_view::<1, 3>(2, 0) * *x)[0] + p[(2, 3)] > 0.0)
        .count();
    if 2 * in_front < points.len() {
        p = -p;
    }

    let m: Matrix3<f64> = p.fixed_view::<3, 3>(0, 0).into_owned();
    let msvd = m.svd(true, true);
    let (u, v_t) = (msvd.u.unwrap(), msvd.v_t.unwrap());
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = u * d * v_t;
    let scale = msvd.singular_values.sum() / 3.0;
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::Degenerate("pnp projection has zero scale"));
    }
    let t = p.column(3) / scale;
    Ok(RigidTransform::from_rotation_matrix(&r, t))
}
