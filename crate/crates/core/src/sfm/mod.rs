//! Object map construction from posed views: pairwise descriptor matching,
//! feature tracks, linear triangulation and filtering.

pub(crate) mod map;
pub(crate) mod matching;
mod tracks;
mod triangulate;
mod union_find;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::geometry::{BoundingBox3, CameraIntrinsics, RigidTransform};
use crate::scene::ViewObservation;
use crate::Descriptor;

pub use map::{build_object_map, init_3d_descriptor, MapConfig, MIN_MAP_POINTS};
pub use matching::{match_views_nn, PairMatches};
pub use tracks::build_tracks;
pub use triangulate::{triangulate, triangulate_track, TriangulationRay};
pub use union_find::UnionFind;

/// A keypoint reference: `(view_id, keypoint index)`.
pub type KeypointRef = (u64, usize);

/// Keypoints across views that observe one 3D point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTrack {
    pub track_id: u64,
    /// Sorted by view id; at most one entry per view.
    pub observations: Vec<KeypointRef>,
    pub descriptors: Vec<Descriptor>,
}

impl FeatureTrack {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }
}

/// A posed view used for mapping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapView {
    pub observation: ViewObservation,
    /// camera-from-object
    pub pose: RigidTransform,
    pub intrinsics: CameraIntrinsics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapPoint {
    pub id: u64,
    pub position: Vector3<f64>,
}

/// Sparse object point cloud with per-point tracks and 3D descriptors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectMap {
    pub points: Vec<MapPoint>,
    pub tracks: Vec<FeatureTrack>,
    pub desc3d: Vec<Descriptor>,
    pub bbox: BoundingBox3,
}

impl ObjectMap {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn descriptor_dim(&self) -> usize {
        self.desc3d.first().map_or(0, Vec::len)
    }

    /// Checks the structural invariants of the map.
    pub fn check_invariants(&self) -> crate::Result<()> {
        use crate::Error;
        if self.points.len() != self.tracks.len() || self.points.len() != self.desc3d.len() {
            return Err(Error::Format("object map arrays differ in length".into()));
        }
        for p in &self.points {
            if !self.bbox.contains(&p.position) {
                return Err(Error::Format(format!("map point {} outside bbox", p.id)));
            }
        }
        for d in &self.desc3d {
            let n = d.iter().map(|x| x * x).sum::<f64>().sqrt();
            if (n - 1.0).abs() > 1e-9 {
                return Err(Error::Format("3D descriptor is not unit-norm".into()));
            }
        }
        for t in &self.tracks {
            if t.observations.len() < 2 || t.observations.len() != t.descriptors.len() {
                return Err(Error::Format(format!("malformed track {}", t.track_id)));
            }
            if t.observations.windows(2).any(|w| w[0].0 >= w[1].0) {
                return Err(Error::Format(format!("track {} repeats a view", t.track_id)));
            }
        }
        Ok(())
    }
}
