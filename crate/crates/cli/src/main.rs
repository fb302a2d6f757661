use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use objpose::bench::{
    localize_view, map_point_labels, match_query, prepare_from_scene, read_json, records_to_csv, report_row,
    report_to_csv, run_ablation, train_variant, write_json, AblationWeights, MapFile, PipelineConfig, SceneFile,
    SuiteConfig, Variant, VariantModel,
};
use objpose::geometry::pose_delta;
use objpose::matcher::{gradcheck_seed, AggregationMode, MatcherWeights};
use objpose::scene::{generate_scene, SceneConfig};
use objpose::sfm::{build_object_map, MapConfig};
use objpose::{Error, Result};

#[derive(Parser)]
#[command(name = "objpose", version, about = "One-shot object pose estimation on synthetic scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene and write it as JSON.
    Synth(SynthArgs),
    /// Build the object map of a scene from its map views.
    Map(MapArgs),
    /// Train matcher weights on generated scenes.
    Train(TrainArgs),
    /// Estimate the pose of one query view.
    Localize(LocalizeArgs),
    /// Localize every query view of a scene and write per-view records.
    Eval(EvalArgs),
    /// Run the variant comparison on the evaluation suite.
    Ablate(AblateArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct NoiseArgs {
    /// Use the noisy evaluation-suite settings (overridable below).
    #[arg(long)]
    noisy: bool,
    #[arg(long)]
    sigma_desc: Option<f64>,
    #[arg(long)]
    sigma_px: Option<f64>,
    #[arg(long)]
    clutter_rate: Option<f64>,
}

impl NoiseArgs {
    fn apply(&self, cfg: &mut SceneConfig) {
        if self.noisy {
            let s = SuiteConfig::default().pipeline.scene;
            cfg.sigma_desc = s.sigma_desc;
            cfg.sigma_px = s.sigma_px;
            cfg.clutter_rate = s.clutter_rate;
        }
        if let Some(v) = self.sigma_desc {
            cfg.sigma_desc = v;
        }
        if let Some(v) = self.sigma_px {
            cfg.sigma_px = v;
        }
        if let Some(v) = self.clutter_rate {
            cfg.clutter_rate = v;
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    num_points: usize,
    #[arg(long, default_value_t = 20)]
    map_views: usize,
    #[arg(long, default_value_t = 10)]
    query_views: usize,
    #[command(flatten)]
    noise: NoiseArgs,
}

#[derive(Args)]
struct MapArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long, short)]
    out: PathBuf,
    /// Lowe ratio for view-to-view matching.
    #[arg(long, default_value_t = 0.9)]
    ratio: f64,
    #[arg(long, default_value_t = 3.0)]
    reproj_threshold: f64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Weights file to write.
    #[arg(long, short)]
    out: PathBuf,
    /// Per-step loss as `step,loss`.
    #[arg(long)]
    loss_csv: Option<PathBuf>,
    #[arg(long, default_value = "attention")]
    aggregation: String,
    #[arg(long, default_value_t = 8)]
    scenes: usize,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_views: Option<usize>,
}

#[derive(Args)]
struct MatchArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    map: PathBuf,
    /// gat, mean-gnn, mean-nn or kmeans-nn.
    #[arg(long, default_value = "mean-nn")]
    variant: String,
    /// Weights file, required by the network variants.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct LocalizeArgs {
    #[command(flatten)]
    m: MatchArgs,
    /// Camera id of the query view.
    #[arg(long)]
    view: u64,
    /// Pose JSON destination; stdout when absent.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    m: MatchArgs,
    /// Records CSV destination; stdout when absent.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report CSV destination; stdout when absent.
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    scenes: usize,
    #[arg(long, default_value_t = 8)]
    train_scenes: usize,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Pretrained attention-aggregation weights; trained when absent.
    #[arg(long)]
    weights_gat: Option<PathBuf>,
    /// Pretrained mean-aggregation weights; trained when absent.
    #[arg(long)]
    weights_mean: Option<PathBuf>,
    /// Comma-separated subset of variants.
    #[arg(long, value_delimiter = ',')]
    variants: Option<Vec<String>>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// First seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    count: u64,
}

fn write_text(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => Ok(std::fs::write(p, text)?),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut config = SceneConfig {
        num_points: a.num_points,
        num_map_views: a.map_views,
        num_query_views: a.query_views,
        seed: a.seed,
        ..SceneConfig::default()
    };
    a.noise.apply(&mut config);
    let scene = generate_scene(&config)?;
    write_json(&a.out, "scene", &SceneFile { config, scene })?;
    eprintln!("wrote {}", a.out.display());
    Ok(())
}

fn map(a: MapArgs) -> Result<()> {
    let file: SceneFile = read_json(&a.scene, "scene")?;
    let map_config = MapConfig { ratio: a.ratio, reproj_threshold_px: a.reproj_threshold };
    let prepared = prepare_from_scene(file.scene, &file.config, &map_config)?;
    // rebuild to surface the error itself
    let map = match prepared.map {
        Ok(m) => m,
        Err(_) => build_object_map(&prepared.map_views, &prepared.scene.bbox, &map_config)?,
    };
    eprintln!("{} map points from {} views", map.len(), prepared.map_views.len());
    write_json(&a.out, "map", &MapFile { scene_config: file.config, map_config, map })
}

fn parse_aggregation(s: &str) -> Result<AggregationMode> {
    AggregationMode::parse(s).ok_or_else(|| Error::InvalidConfig(format!("unknown aggregation `{s}`")))
}

fn suite(seed: u64, scenes: usize, train_scenes: usize, steps: Option<usize>, lr: Option<f64>) -> SuiteConfig {
    let mut s = SuiteConfig { seed, num_scenes: scenes, num_train_scenes: train_scenes, ..SuiteConfig::default() };
    s.train.seed = seed;
    if let Some(v) = steps {
        s.train.steps = v;
    }
    if let Some(v) = lr {
        s.train.learning_rate = v;
    }
    s
}

fn train(a: TrainArgs) -> Result<()> {
    let mut s = suite(a.seed, 0, a.scenes, a.steps, a.lr);
    if let Some(b) = a.batch_views {
        s.train.batch_views = b;
    }
    let out = train_variant(&s, parse_aggregation(&a.aggregation)?)?;
    out.weights.save(&a.out)?;
    if let Some(p) = &a.loss_csv {
        let mut text = String::from("step,loss\n");
        for (i, l) in out.loss_curve.iter().enumerate() {
            text.push_str(&format!("{i},{l}\n"));
        }
        std::fs::write(p, text)?;
    }
    if let (Some(first), Some(last)) = (out.loss_curve.first(), out.loss_curve.last()) {
        eprintln!("loss {first:.6e} -> {last:.6e} over {} steps", out.loss_curve.len());
    }
    Ok(())
}

struct Loaded {
    prepared: objpose::bench::PreparedScene,
    variant: Variant,
    weights: Option<MatcherWeights>,
    pipeline: PipelineConfig,
}

fn load(m: &MatchArgs) -> Result<Loaded> {
    let scene: SceneFile = read_json(&m.scene, "scene")?;
    let map: MapFile = read_json(&m.map, "map")?;
    if map.scene_config != scene.config {
        return Err(Error::InvalidConfig("map was built from a different scene configuration".into()));
    }
    let variant = Variant::parse(&m.variant)?;
    let weights = match &m.weights {
        Some(p) => Some(MatcherWeights::load(p)?),
        None => None,
    };
    let mut prepared = prepare_from_scene(scene.scene, &scene.config, &map.map_config)?;
    prepared.labels = map_point_labels(&map.map, &prepared.map_views);
    prepared.map = Ok(map.map);
    let mut pipeline = PipelineConfig { scene: scene.config, map: map.map_config, track_seed: m.seed, ..PipelineConfig::default() };
    pipeline.ransac.seed = m.seed;
    Ok(Loaded { prepared, variant, weights, pipeline })
}

fn localize(a: LocalizeArgs) -> Result<()> {
    let l = load(&a.m)?;
    let map = l.prepared.map.as_ref().expect("map set by load");
    let query = l
        .prepared
        .queries
        .iter()
        .find(|q| q.observation.view_id == a.view)
        .ok_or_else(|| Error::InvalidConfig(format!("no query view with id {}", a.view)))?;
    let model = VariantModel::new(l.variant, l.weights.as_ref(), map, &l.pipeline)?;
    let matches = match_query(&model, map, &query.observation.descriptors)?;
    let (status, result) = localize_view(map, query, &matches, &l.pipeline.ransac);
    let value = match &result {
        Some(r) => {
            let (rot, trans) = pose_delta(&r.pose, &query.gt_pose);
            json!({
                "view_id": a.view,
                "status": status.as_str(),
                "pose": serde_json::to_value(r.pose)?,
                "num_matches": matches.len(),
                "num_inliers": r.inlier_indices.len(),
                "mean_reproj_error_px": r.mean_reproj_error,
                "rot_err_deg": rot,
                "trans_err_units": trans,
            })
        }
        None => json!({
            "view_id": a.view,
            "status": status.as_str(),
            "pose": null,
            "num_matches": matches.len(),
            "num_inliers": 0,
        }),
    };
    write_text(a.out.as_deref(), &(serde_json::to_string_pretty(&value)? + "\n"))?;
    if result.is_none() {
        return Err(Error::NoPose(status.as_str().to_string()));
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let l = load(&a.m)?;
    let (records, timings) = objpose::bench::evaluate_variant(&l.prepared, l.variant, l.weights.as_ref(), &l.pipeline)?;
    let row = report_row(l.variant.name(), &records, &timings)?;
    eprintln!(
        "{}: r1 {:.3} r3 {:.3} r5 {:.3} matches {:.1} ms {:.2}",
        row.variant, row.r1, row.r3, row.r5, row.matches, row.ms
    );
    write_text(a.out.as_deref(), &records_to_csv(&records)?)
}

fn ablate(a: AblateArgs) -> Result<()> {
    let s = suite(a.seed, a.scenes, a.train_scenes, a.steps, a.lr);
    let variants = match &a.variants {
        Some(v) => v.iter().map(|x| Variant::parse(x)).collect::<Result<Vec<_>>>()?,
        None => Variant::ALL.to_vec(),
    };
    let load_or_train = |path: &Option<PathBuf>, mode: AggregationMode, needed: bool| -> Result<MatcherWeights> {
        match path {
            Some(p) => MatcherWeights::load(p),
            None if needed => {
                eprintln!("training {} weights", mode.as_str());
                Ok(train_variant(&s, mode)?.weights)
            }
            None => MatcherWeights::random(&objpose::matcher::MatcherConfig { aggregation: mode, ..s.matcher.clone() }, 0),
        }
    };
    let weights = AblationWeights {
        gat: load_or_train(&a.weights_gat, AggregationMode::Attention, variants.contains(&Variant::Gat))?,
        mean_gnn: load_or_train(&a.weights_mean, AggregationMode::Mean, variants.contains(&Variant::MeanGnn))?,
    };
    let (report, _) = run_ablation(&s, &weights, &variants)?;
    for r in &report.rows {
        eprintln!("{:10} r1 {:.3} r3 {:.3} r5 {:.3} matches {:.1} ms {:.2}", r.variant, r.r1, r.r3, r.r5, r.matches, r.ms);
    }
    write_text(a.out.as_deref(), &report_to_csv(&report)?)
}

fn gradcheck(a: GradcheckArgs) -> Result<()> {
    if a.count == 0 {
        return Err(Error::InvalidConfig("count must be at least 1".into()));
    }
    let mut worst: Option<objpose::matcher::GradCheckReport> = None;
    for seed in a.seed..a.seed + a.count {
        let r = gradcheck_seed(seed)?;
        println!(
            "seed {seed}: {} parameters, max rel {:.3e}, max abs {:.3e} ({}[{}]) {}",
            r.num_parameters,
            r.max_relative_error,
            r.max_absolute_error,
            r.worst_tensor,
            r.worst_index,
            if r.passed() { "ok" } else { "FAIL" }
        );
        if !r.passed() && worst.is_none() {
            worst = Some(r);
        }
    }
    match worst {
        None => Ok(()),
        Some(r) => Err(Error::GradientMismatch { seed: r.seed, error: r.max_relative_error }),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Map(a) => map(a),
        Command::Train(a) => train(a),
        Command::Localize(a) => localize(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate(a),
        Command::Gradcheck(a) => gradcheck(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 3 })
        }
    }
}
