use nalgebra::{DMatrix, Vector3};

use super::{FeatureTrack, MapView};
use crate::geometry::{CameraIntrinsics, Pixel, RigidTransform, DEPTH_EPSILON};
use crate::{Error, Result};

/// Minimum homogeneous scale of the triangulated point.
const MIN_HOMOGENEOUS_W: f64 = 1e-12;
/// Below this ratio of singular values the system has more than a one-dimensional null space.
const RANK_TOLERANCE: f64 = 1e-10;

/// One observation of a point: a pixel seen from a camera-from-object pose.
#[derive(Debug, Clone, Copy)]
pub struct TriangulationRay<'a> {
    pub pixel: Pixel,
    pub pose: &'a RigidTransform,
    pub intrinsics: &'a CameraIntrinsics,
}

/// Linear multi-view triangulation (DLT) in normalized image coordinates.
///
/// Each ray contributes the two rows of `x × (P X) = 0`. The point is the
/// right singular vector of the smallest singular value, dehomogenized.
pub fn triangulate(rays: &[TriangulationRay<'_>]) -> Result<Vector3<f64>> {
    if rays.len() < 2 {
        return Err(Error::Degenerate("triangulation needs at least two observations"));
    }
    let mut a = DMatrix::<f64>::zeros(2 * rays.len(), 4);
    for (i, ray) in rays.iter().enumerate() {
        let x = ray.intrinsics.normalize(&ray.pixel);
        let r = ray.pose.rotation_matrix();
        let t = ray.pose.translation();
        let p = |row: usize| [r[(row, 0)], r[(row, 1)], r[(row, 2)], t[row]];
        let (p0, p1, p2) = (p(0), p(1), p(2));
        for c in 0..4 {
            a[(2 * i, c)] = x.x * p2[c] - p0[c];
            a[(2 * i + 1, c)] = x.y * p2[c] - p1[c];
        }
    }
    for mut row in a.row_iter_mut() {
        let n = row.norm();
        if n > 0.0 {
            row /= n;
        }
    }

    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(Error::Degenerate("SVD failed"))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let s = &svd.singular_values;
    if order.len() < 4 || s[order[2]] <= RANK_TOLERANCE * s[order[0]] {
        return Err(Error::Degenerate("triangulation rays are parallel"));
    }
    let h = v_t.row(order[3]);
    let w = h[3];
    if w.abs() < MIN_HOMOGENEOUS_W {
        return Err(Error::Degenerate("triangulated point at infinity"));
    }
    let point = Vector3::new(h[0] / w, h[1] / w, h[2] / w);
    for ray in rays {
        if ray.pose.transform_point(&point).z <= DEPTH_EPSILON {
            return Err(Error::Degenerate("triangulated point behind a camera"));
        }
    }
    Ok(point)
}

/// Gathers a track's rays from `views` and triangulates it.
pub fn triangulate_track(track: &FeatureTrack, views: &[MapView]) -> Result<Vector3<f64>> {
    let rays = track_rays(track, views)?;
    triangulate(&rays)
}

pub(crate) fn track_rays<'a>(track: &FeatureTrack, views: &'a [MapView]) -> Result<Vec<TriangulationRay<'a>>> {
    track
        .observations
        .iter()
        .map(|&(view_id, k)| {
            let view = views
                .iter()
                .find(|v| v.observation.view_id == view_id)
                .ok_or_else(|| Error::InvalidConfig(format!("track references unknown view {view_id}")))?;
            let pixel = *view.observation.keypoints.get(k).ok_or_else(|| {
                Error::InvalidConfig(format!("keypoint {k} out of range in view {view_id}"))
            })?;
            Ok(TriangulationRay {
                pixel,
                pose: &view.pose,
                intrinsics: &view.intrinsics,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{look_at, project};

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640.0, 480.0).unwrap()
    }

    #[test]
    fn two_views_sixty_degrees_apart() {
        let k = k();
        let target = Vector3::zeros();
        let eye_a = Vector3::new(1.0, 0.0, 0.3);
        let a60 = 60f64.to_radians();
        let eye_b = Vector3::new(a60.cos(), a60.sin(), 0.3);
        let pa = look_at(&eye_a, &target, &Vector3::z()).unwrap();
        let pb = look_at(&eye_b, &target, &Vector3::z()).unwrap();
        let x = Vector3::new(0.1, 0.2, 0.0);
        let rays = [
            TriangulationRay { pixel: project(&k, &pa, &x).unwrap(), pose: &pa, intrinsics: &k },
            TriangulationRay { pixel: project(&k, &pb, &x).unwrap(), pose: &pb, intrinsics: &k },
        ];
        let got = triangulate(&rays).unwrap();
        assert!((got - x).norm() < 1e-8, "{got:?}");
    }

    #[test]
    fn identical_poses_fail() {
        let k = k();
        let pose = look_at(&Vector3::new(1.0, 0.0, 0.3), &Vector3::zeros(), &Vector3::z()).unwrap();
        let px = project(&k, &pose, &Vector3::new(0.05, 0.0, 0.0)).unwrap();
        let rays = [
            TriangulationRay { pixel: px, pose: &pose, intrinsics: &k },
            TriangulationRay { pixel: px, pose: &pose, intrinsics: &k },
        ];
        assert!(matches!(triangulate(&rays), Err(Error::Degenerate(_))));
    }

    #[test]
    fn point_behind_cameras_fails() {
        let k = k();
        // both cameras look away from the point's true location along +z
        let pa = RigidTransform::identity();
        let pb = RigidTransform::new(Default::default(), Vector3::new(-0.2, 0.0, 0.0));
        let x = Vector3::new(0.1, 0.05, -2.0);
        let xa = pa.transform_point(&x);
        let xb = pb.transform_point(&x);
        // pixels formed by central projection of a point behind the image plane
        let pix = |p: Vector3<f64>| Pixel::new(500.0 * p.x / p.z + 320.0, 500.0 * p.y / p.z + 240.0);
        let rays = [
            TriangulationRay { pixel: pix(xa), pose: &pa, intrinsics: &k },
            TriangulationRay { pixel: pix(xb), pose: &pb, intrinsics: &k },
        ];
        assert!(matches!(triangulate(&rays), Err(Error::Degenerate(_))));
    }

    #[test]
    fn single_ray_fails() {
        let k = k();
        let pose = RigidTransform::identity();
        let rays = [TriangulationRay { pixel: Pixel::new(320.0, 240.0), pose: &pose, intrinsics: &k }];
        assert!(triangulate(&rays).is_err());
    }
}
