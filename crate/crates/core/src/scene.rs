//! Deterministic synthetic scenes standing in for a real object scan.
//!
//! A scene is a cloud of points with latent descriptors inside an oriented
//! box, plus cameras on a circular orbit looking at the box center. Rendering
//! a view produces noisy keypoints and descriptors together with the ground
//! truth point id of every keypoint.

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::geometry::{look_at, BoundingBox3, CameraIntrinsics, Pixel, RigidTransform};
use crate::rng::{stream, StreamKind};
use crate::{Descriptor, Error, Result};

/// Pixels added on each side of the tight keypoint rectangle.
pub const BBOX2D_DILATION_PX: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub num_points: usize,
    pub bbox: BoundingBox3,
    pub num_map_views: usize,
    pub num_query_views: usize,
    pub orbit_radius: f64,
    pub orbit_height_range: (f64, f64),
    pub descriptor_dim: usize,
    pub sigma_desc: f64,
    pub sigma_px: f64,
    pub clutter_rate: f64,
    pub intrinsics: CameraIntrinsics,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            num_points: 200,
            bbox: BoundingBox3 {
                center: Vector3::new(0.0, 0.0, 0.1),
                dimensions: Vector3::new(0.3, 0.25, 0.2),
                yaw: 0.3,
            },
            num_map_views: 20,
            num_query_views: 10,
            orbit_radius: 0.8,
            orbit_height_range: (0.25, 0.6),
            descriptor_dim: 32,
            sigma_desc: 0.0,
            sigma_px: 0.0,
            clutter_rate: 0.0,
            intrinsics: CameraIntrinsics {
                fx: 500.0,
                fy: 500.0,
                cx: 320.0,
                cy: 240.0,
                width: 640.0,
                height: 480.0,
            },
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        self.bbox.validate()?;
        self.intrinsics.validate()?;
        if self.num_points < 8 {
            return fail("num_points must be at least 8");
        }
        if self.descriptor_dim < 4 {
            return fail("descriptor_dim must be at least 4");
        }
        if !(self.sigma_desc >= 0.0 && self.sigma_px >= 0.0) {
            return fail("noise standard deviations must be non-negative");
        }
        if !(0.0..1.0).contains(&self.clutter_rate) {
            return fail("clutter_rate must lie in [0, 1)");
        }
        if !(self.orbit_radius > 0.0) {
            return fail("orbit_radius must be positive");
        }
        let (lo, hi) = self.orbit_height_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return fail("orbit_height_range must be an ordered finite pair");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenePoint {
    pub id: u64,
    pub position: Vector3<f64>,
    pub descriptor: Descriptor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub id: u64,
    /// camera-from-object
    pub pose: RigidTransform,
    pub intrinsics: CameraIntrinsics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub points: Vec<ScenePoint>,
    /// Map cameras first (`num_map_views` of them), then query cameras.
    pub cameras: Vec<Camera>,
    pub num_map_views: usize,
    pub bbox: BoundingBox3,
    pub descriptor_dim: usize,
}

impl SyntheticScene {
    pub fn camera(&self, id: u64) -> Option<&Camera> {
        self.cameras.iter().find(|c| c.id == id)
    }

    pub fn map_cameras(&self) -> &[Camera] {
        &self.cameras[..self.num_map_views]
    }

    pub fn query_cameras(&self) -> &[Camera] {
        &self.cameras[self.num_map_views..]
    }

    pub fn point(&self, id: u64) -> Option<&ScenePoint> {
        // ids are dense and in order for generated scenes
        match self.points.get(id as usize) {
            Some(p) if p.id == id => Some(p),
            _ => self.points.iter().find(|p| p.id == id),
        }
    }
}

/// Ground-truth label of a rendered keypoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KeypointSource {
    Point(u64),
    Clutter,
}

impl KeypointSource {
    pub fn point_id(self) -> Option<u64> {
        match self {
            KeypointSource::Point(id) => Some(id),
            KeypointSource::Clutter => None,
        }
    }
}

/// Axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min_u: f64,
    pub min_v: f64,
    pub max_u: f64,
    pub max_v: f64,
}

impl Rect {
    pub fn contains(&self, px: &Pixel) -> bool {
        px.u >= self.min_u && px.u <= self.max_u && px.v >= self.min_v && px.v <= self.max_v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewObservation {
    pub view_id: u64,
    pub keypoints: Vec<Pixel>,
    pub descriptors: Vec<Descriptor>,
    pub gt_point_ids: Vec<KeypointSource>,
    pub bbox2d: Rect,
}

impl ViewObservation {
    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }

    /// Keeps only keypoints inside `bbox2d`.
    pub fn filtered_to_bbox(&self) -> ViewObservation {
        let keep: Vec<usize> = (0..self.len())
            .filter(|&i| self.bbox2d.contains(&self.keypoints[i]))
            .collect();
        ViewObservation {
            view_id: self.view_id,
            keypoints: keep.iter().map(|&i| self.keypoints[i]).collect(),
            descriptors: keep.iter().map(|&i| self.descriptors[i].clone()).collect(),
            gt_point_ids: keep.iter().map(|&i| self.gt_point_ids[i]).collect(),
            bbox2d: self.bbox2d,
        }
    }
}

pub(crate) fn normalized(mut v: Descriptor) -> Option<Descriptor> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(n > 1e-300) || !n.is_finite() {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= n);
    Some(v)
}

/// A Gaussian direction in `dim` dimensions.
pub fn random_unit<R: Rng>(rng: &mut R, dim: usize) -> Descriptor {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if let Some(u) = normalized(v) {
            return u;
        }
    }
}

pub fn generate_scene(cfg: &SceneConfig) -> Result<SyntheticScene> {
    cfg.validate()?;
    let mut rng = stream(cfg.seed, StreamKind::ScenePoints, 0);
    let half = cfg.bbox.dimensions / 2.0;
    let points = (0..cfg.num_points as u64)
        .map(|id| {
            let local = Vector3::new(
                rng.random_range(-half.x..=half.x),
                rng.random_range(-half.y..=half.y),
                rng.random_range(-half.z..=half.z),
            );
            ScenePoint {
                id,
                position: cfg.bbox.from_local(&local),
                descriptor: random_unit(&mut rng, cfg.descriptor_dim),
            }
        })
        .collect();

    let mut cam_rng = stream(cfg.seed, StreamKind::Cameras, 0);
    let (h_lo, h_hi) = cfg.orbit_height_range;
    let target = cfg.bbox.center;
    let total = cfg.num_map_views + cfg.num_query_views;
    let mut cameras = Vec::with_capacity(total);
    for i in 0..total {
        let azimuth = if i < cfg.num_map_views {
            std::f64::consts::TAU * i as f64 / cfg.num_map_views as f64
        } else {
            cam_rng.random_range(0.0..std::f64::consts::TAU)
        };
        let height = if h_hi > h_lo {
            cam_rng.random_range(h_lo..h_hi)
        } else {
            h_lo
        };
        let eye = target
            + Vector3::new(
                cfg.orbit_radius * azimuth.cos(),
                cfg.orbit_radius * azimuth.sin(),
                height,
            );
        cameras.push(Camera {
            id: i as u64,
            pose: look_at(&eye, &target, &Vector3::z())?,
            intrinsics: cfg.intrinsics,
        });
    }

    Ok(SyntheticScene {
        points,
        cameras,
        num_map_views: cfg.num_map_views,
        bbox: cfg.bbox,
        descriptor_dim: cfg.descriptor_dim,
    })
}

/// Noise and clutter settings for rendering a view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderNoise {
    pub sigma_px: f64,
    pub sigma_desc: f64,
    pub clutter_rate: f64,
}

impl From<&SceneConfig> for RenderNoise {
    fn from(cfg: &SceneConfig) -> Self {
        Self {
            sigma_px: cfg.sigma_px,
            sigma_desc: cfg.sigma_desc,
            clutter_rate: cfg.clutter_rate,
        }
    }
}

pub fn render_view(
    scene: &SyntheticScene,
    camera_id: u64,
    noise: RenderNoise,
    seed: u64,
) -> Result<ViewObservation> {
    let cam = scene
        .camera(camera_id)
        .ok_or_else(|| Error::InvalidConfig(format!("unknown camera id {camera_id}")))?;
    let k = &cam.intrinsics;
    let mut rng = stream(seed, StreamKind::View, camera_id);

    let mut entries: Vec<(Pixel, Descriptor, KeypointSource)> = Vec::new();
    for point in &scene.points {
        let Some(exact) = k.project_camera_point(&cam.pose.transform_point(&point.position)) else {
            continue;
        };
        if !k.in_frame(&exact) {
            continue;
        }
        let du: f64 = rng.sample(StandardNormal);
        let dv: f64 = rng.sample(StandardNormal);
        let px = Pixel::new(exact.u + noise.sigma_px * du, exact.v + noise.sigma_px * dv);
        let desc = if noise.sigma_desc > 0.0 {
            let noisy: Vec<f64> = point
                .descriptor
                .iter()
                .map(|x| x + noise.sigma_desc * rng.sample::<f64, _>(StandardNormal))
                .collect();
            normalized(noisy).unwrap_or_else(|| point.descriptor.clone())
        } else {
            point.descriptor.clone()
        };
        if k.in_frame(&px) {
            entries.push((px, desc, KeypointSource::Point(point.id)));
        }
    }

    let bbox2d = tight_rect(entries.iter().map(|e| &e.0), k);

    let n_clutter = (noise.clutter_rate * entries.len() as f64).floor() as usize;
    for _ in 0..n_clutter {
        let px = Pixel::new(rng.random_range(0.0..k.width), rng.random_range(0.0..k.height));
        let desc = random_unit(&mut rng, scene.descriptor_dim);
        entries.push((px, desc, KeypointSource::Clutter));
    }
    if n_clutter > 0 {
        entries.shuffle(&mut rng);
    }

    let mut obs = ViewObservation {
        view_id: camera_id,
        keypoints: Vec::with_capacity(entries.len()),
        descriptors: Vec::with_capacity(entries.len()),
        gt_point_ids: Vec::with_capacity(entries.len()),
        bbox2d,
    };
    for (px, desc, src) in entries {
        obs.keypoints.push(px);
        obs.descriptors.push(desc);
        obs.gt_point_ids.push(src);
    }
    Ok(obs)
}

fn tight_rect<'a>(pixels: impl Iterator<Item = &'a Pixel>, k: &CameraIntrinsics) -> Rect {
    let mut r = Rect {
        min_u: f64::INFINITY,
        min_v: f64::INFINITY,
        max_u: f64::NEG_INFINITY,
        max_v: f64::NEG_INFINITY,
    };
    for p in pixels {
        r.min_u = r.min_u.min(p.u);
        r.min_v = r.min_v.min(p.v);
        r.max_u = r.max_u.max(p.u);
        r.max_v = r.max_v.max(p.v);
    }
    if !r.min_u.is_finite() {
        // nothing visible: an empty rectangle
        return Rect {
            min_u: 0.0,
            min_v: 0.0,
            max_u: -1.0,
            max_v: -1.0,
        };
    }
    Rect {
        min_u: (r.min_u - BBOX2D_DILATION_PX).max(0.0),
        min_v: (r.min_v - BBOX2D_DILATION_PX).max(0.0),
        max_u: (r.max_u + BBOX2D_DILATION_PX).min(k.width),
        max_v: (r.max_v + BBOX2D_DILATION_PX).min(k.height),
    }
}

/// Renders every map camera of the scene.
pub fn render_map_views(scene: &SyntheticScene, noise: RenderNoise, seed: u64) -> Result<Vec<ViewObservation>> {
    scene
        .map_cameras()
        .iter()
        .map(|c| render_view(scene, c.id, noise, seed))
        .collect()
}
