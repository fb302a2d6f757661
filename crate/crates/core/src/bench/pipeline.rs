use std::collections::HashMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::report_row;
use super::{PoseErrorRecord, ReportRow, SolverStatus, Variant};
use crate::geometry::{pose_delta, CameraIntrinsics, RigidTransform};
use crate::matcher::{
    aggregate_kmeans, match_nearest_neighbor, matcher_forward, sample_or_pad_track, select_matches,
    AggregationMode, MatchSet, MatcherInput, MatcherWeights, TrainingSample,
};
use crate::rng::{stream_key, StreamKind};
use crate::scene::{generate_scene, render_view, RenderNoise, SceneConfig, SyntheticScene, ViewObservation};
use crate::sfm::{build_object_map, MapConfig, MapView, ObjectMap};
use crate::solver::{ransac_pnp, Correspondence2D3D, PnPResult, RansacConfig};
use crate::{Descriptor, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub scene: SceneConfig,
    pub map: MapConfig,
    pub ransac: RansacConfig,
    /// Lowe ratio of the nearest-neighbour variants.
    pub nn_ratio: f64,
    /// Centers per track for the k-means variant.
    pub kmeans_k: usize,
    /// Seed of the track sampling fed to the network.
    pub track_seed: u64,
    /// Leading frames per scene left out of the timing median.
    pub warmup_frames: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            scene: SceneConfig::default(),
            map: MapConfig::default(),
            ransac: RansacConfig::default(),
            nn_ratio: 0.9,
            kmeans_k: 3,
            track_seed: 0,
            warmup_frames: 3,
        }
    }
}

/// A query view restricted to its 2D box, with its ground-truth pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryView {
    pub observation: ViewObservation,
    pub gt_pose: RigidTransform,
    pub intrinsics: CameraIntrinsics,
}

/// A generated scene with its map and query views.
#[derive(Debug, Clone)]
pub struct PreparedScene {
    pub seed: u64,
    pub scene: SyntheticScene,
    pub map_views: Vec<MapView>,
    /// `Err` holds the mapping failure message.
    pub map: std::result::Result<ObjectMap, String>,
    /// Ground-truth scene point behind each map point, when unambiguous.
    pub labels: Vec<Option<u64>>,
    pub queries: Vec<QueryView>,
}

pub fn prepare_scene(cfg: &SceneConfig, map_cfg: &MapConfig) -> Result<PreparedScene> {
    prepare_from_scene(generate_scene(cfg)?, cfg, map_cfg)
}

/// Renders the map and query views of an existing scene with the noise of
/// `cfg` and builds its map.
pub fn prepare_from_scene(scene: SyntheticScene, cfg: &SceneConfig, map_cfg: &MapConfig) -> Result<PreparedScene> {
    let noise = RenderNoise::from(cfg);
    let map_views = scene
        .map_cameras()
        .iter()
        .map(|c| {
            Ok(MapView {
                observation: render_view(&scene, c.id, noise, cfg.seed)?,
                pose: c.pose,
                intrinsics: c.intrinsics,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let queries = scene
        .query_cameras()
        .iter()
        .map(|c| {
            Ok(QueryView {
                observation: render_view(&scene, c.id, noise, cfg.seed)?.filtered_to_bbox(),
                gt_pose: c.pose,
                intrinsics: c.intrinsics,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let map = match build_object_map(&map_views, &scene.bbox, map_cfg) {
        Ok(m) => Ok(m),
        Err(e) if e.is_validation() => return Err(e),
        Err(e) => Err(e.to_string()),
    };
    let labels = map.as_ref().map(|m| map_point_labels(m, &map_views)).unwrap_or_default();
    Ok(PreparedScene { seed: cfg.seed, scene, map_views, map, labels, queries })
}

/// Majority ground-truth point of each map track; `None` when no id holds
/// a strict majority.
pub fn map_point_labels(map: &ObjectMap, views: &[MapView]) -> Vec<Option<u64>> {
    let by_id: HashMap<u64, &ViewObservation> = views.iter().map(|v| (v.observation.view_id, &v.observation)).collect();
    map.tracks
        .iter()
        .map(|t| {
            let mut counts: HashMap<u64, usize> = HashMap::new();
            for (view, kp) in &t.observations {
                if let Some(id) = by_id.get(view).and_then(|o| o.gt_point_ids.get(*kp)).and_then(|s| s.point_id()) {
                    *counts.entry(id).or_default() += 1;
                }
            }
            counts
                .into_iter()
                .find(|&(_, n)| 2 * n > t.observations.len())
                .map(|(id, _)| id)
        })
        .collect()
}

/// One-to-one ground-truth matches between query keypoints and map points.
/// When several map points share a label the one with the longest track wins.
pub fn query_positives(query: &ViewObservation, labels: &[Option<u64>], map: &ObjectMap) -> Vec<(usize, usize)> {
    let mut owner: HashMap<u64, usize> = HashMap::new();
    for (j, l) in labels.iter().enumerate() {
        if let Some(id) = l {
            let e = owner.entry(*id).or_insert(j);
            if map.tracks[j].len() > map.tracks[*e].len() {
                *e = j;
            }
        }
    }
    query
        .gt_point_ids
        .iter()
        .enumerate()
        .filter_map(|(q, s)| s.point_id().and_then(|id| owner.get(&id)).map(|&j| (q, j)))
        .collect()
}

fn sampled_tracks(map: &ObjectMap, k: usize, seed: u64) -> Result<Vec<Vec<Descriptor>>> {
    map.tracks
        .iter()
        .enumerate()
        .map(|(j, t)| sample_or_pad_track(&t.descriptors, k, stream_key(seed, StreamKind::TrackSample, j as u64)))
        .collect()
}

/// Supervised samples from every query view of a scene that has at least
/// one ground-truth match.
pub fn training_samples(prepared: &PreparedScene, track_sample: usize, seed: u64) -> Result<Vec<TrainingSample>> {
    let Ok(map) = &prepared.map else {
        return Ok(Vec::new());
    };
    let tracks = sampled_tracks(map, track_sample, seed)?;
    let mut out = Vec::new();
    for q in &prepared.queries {
        let positives = query_positives(&q.observation, &prepared.labels, map);
        if positives.is_empty() {
            continue;
        }
        out.push(TrainingSample {
            input: MatcherInput::new(&q.observation.descriptors, &map.desc3d, &tracks, track_sample)?,
            positives,
        });
    }
    Ok(out)
}

/// Per-map state of a matching variant.
pub enum VariantModel<'a> {
    Network {
        weights: &'a MatcherWeights,
        tracks: Vec<Vec<Descriptor>>,
    },
    NearestNeighbor {
        centers: Vec<Vec<Descriptor>>,
        ratio: f64,
    },
}

impl<'a> VariantModel<'a> {
    pub fn new(variant: Variant, weights: Option<&'a MatcherWeights>, map: &ObjectMap, cfg: &PipelineConfig) -> Result<Self> {
        match variant {
            Variant::Gat | Variant::MeanGnn => {
                let weights = weights.ok_or_else(|| Error::InvalidConfig(format!("variant {} needs weights", variant.name())))?;
                let want = if variant == Variant::Gat { AggregationMode::Attention } else { AggregationMode::Mean };
                if weights.config.aggregation != want {
                    return Err(Error::InvalidConfig(format!(
                        "variant {} needs {} aggregation weights",
                        variant.name(),
                        want.as_str()
                    )));
                }
                let tracks = sampled_tracks(map, weights.config.track_sample, cfg.track_seed)?;
                Ok(VariantModel::Network { weights, tracks })
            }
            Variant::MeanNn => Ok(VariantModel::NearestNeighbor {
                centers: map.desc3d.iter().map(|d| vec![d.clone()]).collect(),
                ratio: cfg.nn_ratio,
            }),
            Variant::KMeansNn => Ok(VariantModel::NearestNeighbor {
                centers: map
                    .tracks
                    .iter()
                    .enumerate()
                    .map(|(j, t)| aggregate_kmeans(&t.descriptors, cfg.kmeans_k, stream_key(cfg.track_seed, StreamKind::KMeans, j as u64)))
                    .collect::<Result<_>>()?,
                ratio: cfg.nn_ratio,
            }),
        }
    }
}

pub fn match_query(model: &VariantModel, map: &ObjectMap, query: &[Descriptor]) -> Result<MatchSet> {
    if query.is_empty() || map.is_empty() {
        return Ok(MatchSet::default());
    }
    match model {
        VariantModel::Network { weights, tracks } => {
            let input = MatcherInput::new(query, &map.desc3d, tracks, weights.config.track_sample)?;
            let (_, c) = matcher_forward(&input, weights)?;
            Ok(select_matches(&c, weights.config.confidence_threshold))
        }
        VariantModel::NearestNeighbor { centers, ratio } => Ok(match_nearest_neighbor(query, centers, *ratio)),
    }
}

/// Solves the pose of one query view from its matches.
pub fn localize_view(
    map: &ObjectMap,
    query: &QueryView,
    matches: &MatchSet,
    ransac: &RansacConfig,
) -> (SolverStatus, Option<PnPResult>) {
    if matches.len() < ransac.sample_size {
        return (SolverStatus::TooFewMatches, None);
    }
    let corrs: Vec<Correspondence2D3D> = matches
        .matches
        .iter()
        .map(|m| Correspondence2D3D {
            pixel: query.observation.keypoints[m.query],
            point: map.points[m.point].position,
            confidence: m.confidence,
        })
        .collect();
    let cfg = RansacConfig {
        seed: stream_key(ransac.seed, StreamKind::Ransac, query.observation.view_id),
        ..ransac.clone()
    };
    match ransac_pnp(&corrs, &query.intrinsics, &cfg) {
        Ok(r) => (SolverStatus::Success, Some(r)),
        Err(_) => (SolverStatus::SolverFailed, None),
    }
}

/// Runs one variant over every query view of a prepared scene. Returns the
/// records and the per-frame timings after the warm-up frames.
pub fn evaluate_variant(
    prepared: &PreparedScene,
    variant: Variant,
    weights: Option<&MatcherWeights>,
    cfg: &PipelineConfig,
) -> Result<(Vec<PoseErrorRecord>, Vec<f64>)> {
    let map = match &prepared.map {
        Ok(m) => m,
        Err(_) => {
            let records = prepared
                .queries
                .iter()
                .map(|q| PoseErrorRecord {
                    scene_seed: prepared.seed,
                    view_id: q.observation.view_id,
                    rot_err_deg: None,
                    trans_err_units: None,
                    num_matches: 0,
                    num_correct: 0,
                    num_inliers: 0,
                    status: SolverStatus::MapFailed,
                    ms: 0.0,
                })
                .collect();
            return Ok((records, Vec::new()));
        }
    };
    let model = VariantModel::new(variant, weights, map, cfg)?;
    let mut records = Vec::with_capacity(prepared.queries.len());
    let mut timings = Vec::new();
    for (i, q) in prepared.queries.iter().enumerate() {
        let start = Instant::now();
        let matches = match_query(&model, map, &q.observation.descriptors)?;
        let (status, result) = localize_view(map, q, &matches, &cfg.ransac);
        let ms = start.elapsed().as_secs_f64() * 1e3;
        if i >= cfg.warmup_frames || prepared.queries.len() <= cfg.warmup_frames {
            timings.push(ms);
        }
        let num_correct = matches
            .matches
            .iter()
            .filter(|m| {
                let truth = q.observation.gt_point_ids[m.query].point_id();
                truth.is_some() && truth == prepared.labels[m.point]
            })
            .count();
        let errors = result.as_ref().map(|r| pose_delta(&r.pose, &q.gt_pose));
        records.push(PoseErrorRecord {
            scene_seed: prepared.seed,
            view_id: q.observation.view_id,
            rot_err_deg: errors.map(|e| e.0),
            trans_err_units: errors.map(|e| e.1),
            num_matches: matches.len(),
            num_correct,
            num_inliers: result.as_ref().map_or(0, |r| r.inlier_indices.len()),
            status,
            ms,
        });
    }
    Ok((records, timings))
}

/// Generates one scene per seed, evaluates `variant` on each (scenes in
/// parallel) and summarizes the records in seed order.
pub fn run_pipeline(
    cfg: &PipelineConfig,
    variant: Variant,
    weights: Option<&MatcherWeights>,
    seeds: &[u64],
) -> Result<(Vec<PoseErrorRecord>, ReportRow)> {
    if seeds.is_empty() {
        return Err(Error::InvalidConfig("run_pipeline needs at least one scene seed".into()));
    }
    let parts: Vec<(Vec<PoseErrorRecord>, Vec<f64>)> = seeds
        .par_iter()
        .map(|&seed| {
            let scene_cfg = SceneConfig { seed, ..cfg.scene.clone() };
            let prepared = prepare_scene(&scene_cfg, &cfg.map)?;
            evaluate_variant(&prepared, variant, weights, cfg)
        })
        .collect::<Result<_>>()?;
    let mut records = Vec::new();
    let mut timings = Vec::new();
    for (r, t) in parts {
        records.extend(r);
        timings.extend(t);
    }
    let row = report_row(variant.name(), &records, &timings)?;
    Ok((records, row))
}
