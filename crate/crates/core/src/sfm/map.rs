use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::matching::match_views_nn;
use super::triangulate::{track_rays, triangulate};
use super::{build_tracks, FeatureTrack, MapPoint, MapView, ObjectMap, PairMatches};
use crate::geometry::BoundingBox3;
use crate::scene::normalized;
use crate::{Descriptor, Error, Result};

pub const MIN_MAP_POINTS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapConfig {
    /// Lowe ratio for 2D-2D matching between map views.
    pub ratio: f64,
    /// Mean reprojection error above which a triangulated point is dropped.
    pub reproj_threshold_px: f64,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            ratio: 0.9,
            reproj_threshold_px: 3.0,
        }
    }
}

/// Mean of the track descriptors, unit-normalized.
pub fn init_3d_descriptor(track: &FeatureTrack) -> Result<Descriptor> {
    mean_descriptor(&track.descriptors)
}

pub(crate) fn mean_descriptor(descriptors: &[Descriptor]) -> Result<Descriptor> {
    let first = descriptors
        .first()
        .ok_or_else(|| Error::InvalidConfig("cannot average an empty track".into()))?;
    let mut sum = vec![0.0; first.len()];
    for d in descriptors {
        if d.len() != sum.len() {
            return Err(Error::DimensionMismatch {
                what: "track descriptor",
                expected: sum.len(),
                actual: d.len(),
            });
        }
        sum.iter_mut().zip(d).for_each(|(s, x)| *s += x);
    }
    let n = descriptors.len() as f64;
    sum.iter_mut().for_each(|s| *s /= n);
    let norm = sum.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < 1e-12 {
        return Err(Error::ZeroDescriptor);
    }
    normalized(sum).ok_or(Error::ZeroDescriptor)
}

/// Builds the object map from posed views: all-pairs matching, tracks,
/// triangulation, box and reprojection filtering, mean 3D descriptors.
pub fn build_object_map(views: &[MapView], bbox: &BoundingBox3, cfg: &MapConfig) -> Result<ObjectMap> {
    if views.len() < 2 {
        return Err(Error::InvalidConfig("mapping needs at least two views".into()));
    }
    if !(cfg.ratio > 0.0 && cfg.ratio <= 1.0) {
        return Err(Error::InvalidConfig("ratio must lie in (0, 1]".into()));
    }
    bbox.validate()?;

    let index_pairs: Vec<(usize, usize)> = (0..views.len())
        .flat_map(|i| (i + 1..views.len()).map(move |j| (i, j)))
        .collect();
    let pairs: Vec<PairMatches> = index_pairs
        .par_iter()
        .map(|&(i, j)| PairMatches {
            view_a: views[i].observation.view_id,
            view_b: views[j].observation.view_id,
            matches: match_views_nn(&views[i].observation, &views[j].observation, cfg.ratio),
        })
        .collect();

    let observations: Vec<_> = views.iter().map(|v| v.observation.clone()).collect();
    let tracks = build_tracks(&observations, &pairs);

    let survivors: Vec<Option<(nalgebra::Vector3<f64>, Descriptor)>> = tracks
        .par_iter()
        .map(|track| {
            let rays = track_rays(track, views).ok()?;
            let point = triangulate(&rays).ok()?;
            if !bbox.contains(&point) {
                return None;
            }
            let mut err = 0.0;
            for ray in &rays {
                let px = ray.intrinsics.project_camera_point(&ray.pose.transform_point(&point))?;
                err += px.distance(&ray.pixel);
            }
            if err / rays.len() as f64 > cfg.reproj_threshold_px {
                return None;
            }
            let desc = init_3d_descriptor(track).ok()?;
            Some((point, desc))
        })
        .collect();

    let mut map = ObjectMap {
        points: Vec::new(),
        tracks: Vec::new(),
        desc3d: Vec::new(),
        bbox: *bbox,
    };
    for (track, kept) in tracks.into_iter().zip(survivors) {
        if let Some((position, desc)) = kept {
            let id = map.points.len() as u64;
            map.points.push(MapPoint { id, position });
            map.tracks.push(FeatureTrack { track_id: id, ..track });
            map.desc3d.push(desc);
        }
    }
    if map.len() < MIN_MAP_POINTS {
        return Err(Error::EmptyMap {
            survivors: map.len(),
            required: MIN_MAP_POINTS,
        });
    }
    Ok(map)
}
