//! Rigid transforms, pinhole cameras and yaw-oriented boxes.

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Minimum camera-frame depth for a point to be projectable.
pub const DEPTH_EPSILON: f64 = 1e-9;

/// An element of SE(3): `x -> R x + t`.
///
/// Poses in this crate are either camera-from-object (the object pose in the
/// camera frame) or its inverse. The rotation is renormalized after every
/// composition. Serialized with a scalar-first quaternion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "TransformRepr", try_from = "TransformRepr")]
pub struct RigidTransform {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
}

#[derive(Serialize, Deserialize)]
struct TransformRepr {
    /// `[w, x, y, z]`
    rotation: [f64; 4],
    translation: [f64; 3],
}

impl From<RigidTransform> for TransformRepr {
    fn from(t: RigidTransform) -> Self {
        let q = t.rotation.quaternion();
        TransformRepr {
            rotation: [q.w, q.i, q.j, q.k],
            translation: t.translation.into(),
        }
    }
}

impl TryFrom<TransformRepr> for RigidTransform {
    type Error = String;

    fn try_from(r: TransformRepr) -> std::result::Result<Self, String> {
        let [w, x, y, z] = r.rotation;
        let q = Quaternion::new(w, x, y, z);
        let norm = q.norm();
        if !norm.is_finite() || norm < 1e-12 || r.translation.iter().any(|v| !v.is_finite()) {
            return Err("rigid transform must have a finite, non-zero quaternion".into());
        }
        let translation = Vector3::from(r.translation);
        if (norm - 1.0).abs() <= 4.0 * f64::EPSILON && w >= 0.0 {
            // already canonical: keep the stored bits
            return Ok(RigidTransform { rotation: UnitQuaternion::new_unchecked(q), translation });
        }
        Ok(RigidTransform::new(UnitQuaternion::from_quaternion(q), translation))
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: renormalize(rotation),
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(UnitQuaternion::identity(), Vector3::zeros())
    }

    pub fn from_rotation_matrix(r: &Matrix3<f64>, translation: Vector3<f64>) -> Self {
        let rot = Rotation3::from_matrix_unchecked(*r);
        Self::new(UnitQuaternion::from_rotation_matrix(&rot), translation)
    }

    /// Rotation of `angle` radians about `axis` (any non-zero vector).
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let rotation = UnitQuaternion::from_scaled_axis(axis.normalize() * angle);
        Self::new(rotation, translation)
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// `[w, x, y, z]`
    pub fn quaternion_wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Applies `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> RigidTransform {
        let inv = self.rotation.inverse();
        RigidTransform::new(inv, -(inv * self.translation))
    }
}

fn renormalize(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    let mut q = UnitQuaternion::new_normalize(q.into_inner());
    // canonical hemisphere keeps serialized poses stable
    if q.w < 0.0 {
        q = UnitQuaternion::new_unchecked(-q.into_inner());
    }
    q
}

pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    a.compose(b)
}

pub fn invert(t: &RigidTransform) -> RigidTransform {
    t.inverse()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: f64, height: f64) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx > 0.0
            && self.cx < self.width
            && self.cy > 0.0
            && self.cy < self.height;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "camera intrinsics out of range: {self:?}"
            )))
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn in_frame(&self, px: &Pixel) -> bool {
        px.u >= 0.0 && px.u < self.width && px.v >= 0.0 && px.v < self.height
    }

    /// Pixel to normalized image-plane coordinates.
    pub fn normalize(&self, px: &Pixel) -> Vector2<f64> {
        Vector2::new((px.u - self.cx) / self.fx, (px.v - self.cy) / self.fy)
    }

    /// Projects a point already expressed in the camera frame.
    pub fn project_camera_point(&self, p: &Vector3<f64>) -> Option<Pixel> {
        if p.z <= DEPTH_EPSILON {
            return None;
        }
        Some(Pixel::new(
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ))
    }

    /// Inverse pinhole: the camera-frame point at `depth` along the pixel ray.
    pub fn unproject(&self, px: &Pixel, depth: f64) -> Vector3<f64> {
        let n = self.normalize(px);
        Vector3::new(n.x * depth, n.y * depth, depth)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pixel {
    pub u: f64,
    pub v: f64,
}

impl Pixel {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }

    pub fn distance(&self, other: &Pixel) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }
}

/// Projects an object-frame point through a camera-from-object pose.
/// Returns `None` when the point lies at or behind the camera plane.
pub fn project(k: &CameraIntrinsics, pose: &RigidTransform, p: &Vector3<f64>) -> Option<Pixel> {
    k.project_camera_point(&pose.transform_point(p))
}

/// An oriented box: yaw about the z axis, extents along local axes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox3 {
    pub center: Vector3<f64>,
    pub dimensions: Vector3<f64>,
    pub yaw: f64,
}

impl BoundingBox3 {
    pub fn new(center: Vector3<f64>, dimensions: Vector3<f64>, yaw: f64) -> Result<Self> {
        let b = Self {
            center,
            dimensions,
            yaw,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let dims_ok = self.dimensions.iter().all(|d| *d > 0.0 && d.is_finite());
        let yaw_ok = self.yaw >= -std::f64::consts::PI && self.yaw < std::f64::consts::PI;
        if dims_ok && yaw_ok && self.center.iter().all(|c| c.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid bounding box: {self:?}")))
        }
    }

    /// World point expressed in the box frame.
    pub fn to_local(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let d = p - self.center;
        let (s, c) = self.yaw.sin_cos();
        Vector3::new(c * d.x + s * d.y, -s * d.x + c * d.y, d.z)
    }

    pub fn from_local(&self, local: &Vector3<f64>) -> Vector3<f64> {
        let (s, c) = self.yaw.sin_cos();
        self.center
            + Vector3::new(
                c * local.x - s * local.y,
                s * local.x + c * local.y,
                local.z,
            )
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        let local = self.to_local(p);
        (0..3).all(|i| local[i].abs() <= self.dimensions[i] / 2.0)
    }

    /// The eight corners, in world coordinates.
    pub fn corners(&self) -> [Vector3<f64>; 8] {
        let h = self.dimensions / 2.0;
        let mut out = [Vector3::zeros(); 8];
        for (i, corner) in out.iter_mut().enumerate() {
            let sx = if i & 1 == 0 { -1.0 } else { 1.0 };
            let sy = if i & 2 == 0 { -1.0 } else { 1.0 };
            let sz = if i & 4 == 0 { -1.0 } else { 1.0 };
            *corner = self.from_local(&Vector3::new(sx * h.x, sy * h.y, sz * h.z));
        }
        out
    }
}

pub fn contains(b: &BoundingBox3, p: &Vector3<f64>) -> bool {
    b.contains(p)
}

/// Rotation error in degrees (geodesic angle of `est * gt^-1`, in `[0, 180]`)
/// and translation error (Euclidean distance between translations).
pub fn pose_delta(est: &RigidTransform, gt: &RigidTransform) -> (f64, f64) {
    let a = est.rotation().quaternion().coords;
    let b = gt.rotation().quaternion().coords;
    // half-angle between the quaternions as 4-vectors; atan2 keeps precision
    // near zero and is exact for identical inputs
    let half = 2.0 * (a - b).norm().atan2((a + b).norm());
    let half = half.min(std::f64::consts::PI - half);
    let angle = 2.0 * half;
    let trans = (est.translation() - gt.translation()).norm();
    (angle.to_degrees(), trans)
}

/// Rotation taking the camera to look from `eye` at `target`, with the image
/// y axis pointing down relative to `up`. Returns camera-from-world.
pub fn look_at(eye: &Vector3<f64>, target: &Vector3<f64>, up: &Vector3<f64>) -> Result<RigidTransform> {
    let forward = target - eye;
    if forward.norm() < 1e-12 {
        return Err(Error::Degenerate("look_at eye coincides with target"));
    }
    let forward = forward.normalize();
    let right = forward.cross(up);
    if right.norm() < 1e-9 {
        return Err(Error::Degenerate("look_at direction parallel to up"));
    }
    let right = right.normalize();
    let down = forward.cross(&right);
    // rows are the camera axes in world coordinates
    let r_cw = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
    let t = -(r_cw * eye);
    Ok(RigidTransform::from_rotation_matrix(&r_cw, t))
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn rot_z90_x1() -> RigidTransform {
        RigidTransform::from_axis_angle(Vector3::z(), FRAC_PI_2, Vector3::new(1.0, 0.0, 0.0))
    }

    fn assert_close(a: &RigidTransform, b: &RigidTransform, tol: f64) {
        let (r, t) = pose_delta(a, b);
        assert!(r.to_radians() <= tol && t <= tol, "rot {r} deg, trans {t}");
    }

    #[test]
    fn compose_by_hand() {
        let a = rot_z90_x1();
        let b = RigidTransform::new(UnitQuaternion::identity(), Vector3::new(0.0, 1.0, 0.0));
        let c = compose(&a, &b);
        // R_z(90) (0,1,0) + (1,0,0) = (-1,0,0) + (1,0,0)
        assert_relative_eq!(c.translation().norm(), 0.0, epsilon = 1e-12);
        let expected = RigidTransform::from_axis_angle(Vector3::z(), FRAC_PI_2, Vector3::zeros());
        assert_close(&c, &expected, 1e-12);
    }

    #[test]
    fn invert_by_hand() {
        let inv = invert(&rot_z90_x1());
        let expected =
            RigidTransform::from_axis_angle(Vector3::z(), -FRAC_PI_2, Vector3::new(0.0, 1.0, 0.0));
        assert_close(&inv, &expected, 1e-12);
        assert_close(&invert(&RigidTransform::identity()), &RigidTransform::identity(), 0.0);
    }

    #[test]
    fn projection_examples() {
        let k = CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0, 100.0, 100.0).unwrap();
        let id = RigidTransform::identity();
        assert_eq!(project(&k, &id, &Vector3::new(0.0, 0.0, 1.0)), Some(Pixel::new(50.0, 50.0)));
        let p = project(&k, &id, &Vector3::new(0.1, 0.0, 1.0)).unwrap();
        assert_relative_eq!(p.u, 60.0, epsilon = 1e-12);
        assert_relative_eq!(p.v, 50.0, epsilon = 1e-12);
        assert_eq!(project(&k, &id, &Vector3::new(0.0, 0.0, -1.0)), None);
        assert_eq!(project(&k, &id, &Vector3::new(0.0, 0.0, 0.0)), None);
    }

    #[test]
    fn box_containment() {
        let b = BoundingBox3::new(Vector3::new(1.0, 2.0, 3.0), Vector3::new(2.0, 4.0, 2.0), 0.0)
            .unwrap();
        assert!(b.contains(&b.center));
        assert!(!b.contains(&(b.center + Vector3::new(1.0 + 1e-9, 0.0, 0.0))));
        let rotated = BoundingBox3 { yaw: FRAC_PI_2, ..b };
        // world x maps to local -y; |-1.9| <= 2
        assert!(rotated.contains(&(b.center + Vector3::new(1.9, 0.0, 0.0))));
        assert!(!b.contains(&(b.center + Vector3::new(1.9, 0.0, 0.0))));
    }

    #[test]
    fn box_rejects_bad_params() {
        assert!(BoundingBox3::new(Vector3::zeros(), Vector3::new(1.0, 0.0, 1.0), 0.0).is_err());
        assert!(BoundingBox3::new(Vector3::zeros(), Vector3::new(1.0, 1.0, 1.0), PI).is_err());
        assert!(BoundingBox3::new(Vector3::zeros(), Vector3::new(1.0, 1.0, 1.0), -PI).is_ok());
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 1.0, 1.0, 2.0, 2.0).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 2.0, 1.0, 2.0, 2.0).is_err());
    }

    #[test]
    fn pose_delta_examples() {
        let gt = RigidTransform::from_axis_angle(
            Vector3::new(0.3, -0.2, 1.0),
            0.7,
            Vector3::new(0.1, -0.2, 0.9),
        );
        assert_eq!(pose_delta(&gt, &gt), (0.0, 0.0));

        let shifted = RigidTransform::new(*gt.rotation(), gt.translation() + Vector3::new(0.03, 0.0, 0.0));
        let (r, t) = pose_delta(&shifted, &gt);
        assert_relative_eq!(r, 0.0, epsilon = 1e-12);
        assert_relative_eq!(t, 0.03, epsilon = 1e-12);

        let rx10 = RigidTransform::from_axis_angle(Vector3::x(), 10f64.to_radians(), Vector3::zeros());
        let est = compose(&rx10, &gt);
        let (r, t) = pose_delta(&est, &gt);
        assert_relative_eq!(r, 10.0, epsilon = 1e-10);
        let expected_t = (rx10.rotation() * gt.translation() - gt.translation()).norm();
        assert_relative_eq!(t, expected_t, epsilon = 1e-12);
    }

    #[test]
    fn pose_delta_range() {
        let a = RigidTransform::identity();
        let b = RigidTransform::from_axis_angle(Vector3::y(), PI, Vector3::zeros());
        let (r, _) = pose_delta(&b, &a);
        assert_relative_eq!(r, 180.0, epsilon = 1e-9);
    }

    #[test]
    fn look_at_centers_target() {
        let k = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640.0, 480.0).unwrap();
        let eye = Vector3::new(0.8, 0.2, 0.4);
        let pose = look_at(&eye, &Vector3::zeros(), &Vector3::z()).unwrap();
        let px = project(&k, &pose, &Vector3::zeros()).unwrap();
        assert_relative_eq!(px.u, 320.0, epsilon = 1e-9);
        assert_relative_eq!(px.v, 240.0, epsilon = 1e-9);
        // world up appears above the center in the image
        let up = project(&k, &pose, &Vector3::new(0.0, 0.0, 0.05)).unwrap();
        assert!(up.v < 240.0);
        assert_relative_eq!(pose.rotation_matrix().determinant(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn serde_uses_scalar_first_quaternion() {
        let t = rot_z90_x1();
        let json = serde_json::to_value(t).unwrap();
        let w = json["rotation"][0].as_f64().unwrap();
        assert_relative_eq!(w, (PI / 4.0).cos(), epsilon = 1e-12);
        let back: RigidTransform = serde_json::from_value(json).unwrap();
        assert_close(&back, &t, 1e-15);
    }

    fn arb_transform() -> impl Strategy<Value = RigidTransform> {
        (
            prop::array::uniform3(-1.0f64..1.0),
            -PI..PI,
            prop::array::uniform3(-5.0f64..5.0),
        )
            .prop_filter_map("non-zero axis", |(axis, angle, t)| {
                let axis = Vector3::from(axis);
                (axis.norm() > 1e-3)
                    .then(|| RigidTransform::from_axis_angle(axis, angle, Vector3::from(t)))
            })
    }

    proptest! {
        #[test]
        fn group_laws(a in arb_transform(), b in arb_transform(), c in arb_transform()) {
            let lhs = a.compose(&b).compose(&c);
            let rhs = a.compose(&b.compose(&c));
            let (r, t) = pose_delta(&lhs, &rhs);
            prop_assert!(r.to_radians() < 1e-9 && t < 1e-9);

            let (r, t) = pose_delta(&a.compose(&a.inverse()), &RigidTransform::identity());
            prop_assert!(r.to_radians() < 1e-9 && t < 1e-9);
            let (r, t) = pose_delta(&a.inverse().inverse(), &a);
            prop_assert!(r.to_radians() < 1e-9 && t < 1e-9);
            let (r, t) = pose_delta(&RigidTransform::identity().compose(&a), &a);
            prop_assert!(r.to_radians() < 1e-12 && t < 1e-12);
            prop_assert!((lhs.rotation().quaternion().norm() - 1.0).abs() < 1e-9);
            prop_assert_eq!(pose_delta(&a, &a), (0.0, 0.0));
        }

        #[test]
        fn unproject_then_project(u in 0.0f64..640.0, v in 0.0f64..480.0, depth in 0.05f64..20.0) {
            let k = CameraIntrinsics::new(520.0, 480.0, 320.0, 240.0, 640.0, 480.0).unwrap();
            let px = Pixel::new(u, v);
            let p = k.unproject(&px, depth);
            let back = k.project_camera_point(&p).unwrap();
            prop_assert!(back.distance(&px) < 1e-9);
        }

        #[test]
        fn containment_is_yaw_equivariant(
            local in prop::array::uniform3(-1.5f64..1.5),
            yaw in -1.0f64..1.0,
            extra in -1.0f64..1.0,
        ) {
            let b = BoundingBox3::new(Vector3::new(0.3, -0.2, 0.1), Vector3::new(2.0, 1.0, 1.5), yaw).unwrap();
            let p = b.from_local(&Vector3::from(local));
            let turned = BoundingBox3 { yaw: yaw + extra, ..b };
            let rot = Rotation3::from_axis_angle(&Vector3::z_axis(), extra);
            let q = b.center + rot * (p - b.center);
            prop_assert_eq!(b.contains(&p), turned.contains(&q));
        }
    }
}
