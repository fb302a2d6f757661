use objpose::bench::{
    read_json, records_from_csv, records_to_csv, run_pipeline, write_json, MapFile, PipelineConfig, PoseErrorRecord,
    SceneFile, Variant,
};
use objpose::geometry::pose_delta;
use objpose::matcher::{AggregationMode, MatcherConfig, MatcherWeights};
use objpose::scene::{generate_scene, render_view, RenderNoise, SceneConfig};
use objpose::sfm::{build_object_map, MapConfig, MapView};
use objpose::solver::{ransac_pnp, Correspondence2D3D, RansacConfig};

fn without_timing(records: &[PoseErrorRecord]) -> Vec<PoseErrorRecord> {
    records.iter().map(|r| PoseErrorRecord { ms: 0.0, ..r.clone() }).collect()
}

#[test]
fn ground_truth_correspondences_give_exact_poses() {
    let cfg = SceneConfig { seed: 4, ..SceneConfig::default() };
    let scene = generate_scene(&cfg).unwrap();
    for cam in scene.query_cameras() {
        let obs = render_view(&scene, cam.id, RenderNoise::from(&cfg), cfg.seed).unwrap();
        let corrs: Vec<_> = obs
            .keypoints
            .iter()
            .zip(&obs.gt_point_ids)
            .filter_map(|(px, id)| id.point_id().map(|id| Correspondence2D3D::new(*px, scene.point(id).unwrap().position)))
            .collect();
        let r = ransac_pnp(&corrs, &cam.intrinsics, &RansacConfig::default()).unwrap();
        let (rot, t) = pose_delta(&r.pose, &cam.pose);
        assert!(rot < 1e-6 && t < 1e-6, "view {}: {rot} deg, {t} units", cam.id);
    }
}

#[test]
fn scene_and_map_files_rebuild_the_same_map() {
    let config = SceneConfig { num_points: 60, seed: 2, ..SceneConfig::default() };
    let scene = generate_scene(&config).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scene.json");
    write_json(&path, "scene", &SceneFile { config: config.clone(), scene: scene.clone() }).unwrap();
    let back: SceneFile = read_json(&path, "scene").unwrap();
    assert_eq!(back.scene, scene);

    let views: Vec<MapView> = back
        .scene
        .map_cameras()
        .iter()
        .map(|c| MapView {
            observation: render_view(&back.scene, c.id, RenderNoise::from(&config), config.seed).unwrap(),
            pose: c.pose,
            intrinsics: c.intrinsics,
        })
        .collect();
    let map = build_object_map(&views, &back.scene.bbox, &MapConfig::default()).unwrap();
    let map_path = dir.path().join("map.json");
    let file = MapFile { scene_config: config, map_config: MapConfig::default(), map };
    write_json(&map_path, "map", &file).unwrap();
    let loaded: MapFile = read_json(&map_path, "map").unwrap();
    assert_eq!(loaded, file);
    loaded.map.check_invariants().unwrap();
}

#[test]
fn pipeline_records_are_deterministic_and_survive_csv() {
    let cfg = PipelineConfig {
        scene: SceneConfig { num_points: 100, num_query_views: 4, sigma_desc: 0.15, sigma_px: 1.0, clutter_rate: 0.2, ..SceneConfig::default() },
        ..PipelineConfig::default()
    };
    let (a, row_a) = run_pipeline(&cfg, Variant::KMeansNn, None, &[5, 6]).unwrap();
    let (b, row_b) = run_pipeline(&cfg, Variant::KMeansNn, None, &[5, 6]).unwrap();
    assert_eq!(without_timing(&a), without_timing(&b));
    assert_eq!((row_a.r1, row_a.r3, row_a.r5, row_a.matches), (row_b.r1, row_b.r3, row_b.r5, row_b.matches));
    assert_eq!(a.iter().map(|r| r.scene_seed).collect::<Vec<_>>(), vec![5, 5, 5, 5, 6, 6, 6, 6]);
    assert_eq!(records_from_csv(&records_to_csv(&a).unwrap()).unwrap(), a);
}

// Regression baseline for untrained weights on a zero-noise scene. Chance
// level is one correct match in J per query view.
#[test]
fn untrained_network_beats_chance_on_clean_scenes() {
    let cfg = PipelineConfig::default();
    let weights = MatcherWeights::random(&MatcherConfig::default(), 0).unwrap();
    let (records, row) = run_pipeline(&cfg, Variant::Gat, Some(&weights), &[0]).unwrap();
    let matches: usize = records.iter().map(|r| r.num_matches).sum();
    let correct: usize = records.iter().map(|r| r.num_correct).sum();
    assert!(matches > 0);
    let precision = correct as f64 / matches as f64;
    assert!(precision >= 0.99, "precision {precision}");
    assert_eq!(row.r1, 1.0);

    let mean = MatcherWeights::random(&MatcherConfig { aggregation: AggregationMode::Mean, ..MatcherConfig::default() }, 0).unwrap();
    let (_, row) = run_pipeline(&cfg, Variant::MeanGnn, Some(&mean), &[0]).unwrap();
    assert_eq!(row.r1, 1.0);
}

#[test]
fn network_variant_without_weights_is_rejected() {
    let cfg = PipelineConfig { scene: SceneConfig { num_points: 40, num_query_views: 2, ..SceneConfig::default() }, ..PipelineConfig::default() };
    let err = run_pipeline(&cfg, Variant::Gat, None, &[0]).unwrap_err();
    assert!(err.is_validation());
}
