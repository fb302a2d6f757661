//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Criteria listed in `EXPECTED_FAILURES` still run at full tolerance and
//! print FAIL when they miss, but do not fail the process unless
//! `OBJPOSE_STRICT=1` is set.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, Vector3};
use rand::Rng;

use objpose::bench::{
    evaluate_variant, prepare_scene, run_ablation, train_ablation_weights, training_samples, PipelineConfig,
    SuiteConfig, Variant,
};
use objpose::geometry::{pose_delta, CameraIntrinsics, Pixel, RigidTransform};
use objpose::matcher::{
    dual_softmax, gradcheck_seed, linear_attention, loss_and_gradient, matcher_forward, train, AttentionWeights,
    MatcherConfig, MatcherInput, MatcherWeights, ScoreMatrix, TrainConfig,
};
use objpose::rng::{stream, StreamKind};
use objpose::scene::{random_unit, SceneConfig};
use objpose::sfm::MapConfig;
use objpose::solver::{ransac_pnp, Correspondence2D3D, RansacConfig};
use objpose::Descriptor;

const EXPECTED_FAILURES: &[usize] = &[6];

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

fn oracle_exactness() -> Outcome {
    let start = Instant::now();
    let cfg = PipelineConfig::default();
    let mut worst = (0.0f64, 0.0f64);
    let mut hits = 0;
    let mut total = 0;
    for seed in 0..5 {
        let scene = SceneConfig { seed, ..cfg.scene.clone() };
        let prepared = prepare_scene(&scene, &cfg.map).unwrap();
        let (records, _) = evaluate_variant(&prepared, Variant::MeanNn, None, &cfg).unwrap();
        for r in records {
            total += 1;
            if let (Some(rot), Some(t)) = (r.rot_err_deg, r.trans_err_units) {
                worst = (worst.0.max(rot), worst.1.max(t));
                if rot <= 1.0 && t <= 0.01 {
                    hits += 1;
                }
            } else {
                worst = (f64::INFINITY, f64::INFINITY);
            }
        }
    }
    let elapsed = start.elapsed();
    let recall = hits as f64 / total as f64;
    outcome(
        recall == 1.0 && worst.0 <= 0.01 && worst.1 <= 1e-4 && within(elapsed, 10.0),
        format!(
            "recall@1cm-1deg {recall:.3} over {total} views, worst {:.2e} deg / {:.2e} units, {:.2} s",
            worst.0,
            worst.1,
            elapsed.as_secs_f64()
        ),
    )
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let reports: Vec<_> = (0..5).map(|s| gradcheck_seed(s).unwrap()).collect();
    let worst = reports.iter().map(|r| r.max_relative_error).fold(0.0, f64::max);
    let elapsed = start.elapsed();
    outcome(
        worst < 1e-4 && within(elapsed, 60.0),
        format!("max relative error {worst:.3e} over 5 seeds, {:.2} s", elapsed.as_secs_f64()),
    )
}

fn random_descs(rng: &mut impl Rng, n: usize, d: usize) -> Vec<Descriptor> {
    (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

fn quadratic_attention(q: &[Descriptor], k: &[Descriptor], v: &[Descriptor], w: &AttentionWeights, eps: f64) -> Vec<Descriptor> {
    let proj = |m: &DMatrix<f64>, x: &Descriptor| -> Vec<f64> {
        (0..m.nrows()).map(|r| (0..m.ncols()).map(|c| m[(r, c)] * x[c]).sum()).collect()
    };
    let phi = |x: Vec<f64>| -> Vec<f64> { x.into_iter().map(|z| if z > 0.0 { z + 1.0 } else { z.exp() }).collect() };
    let pk: Vec<Vec<f64>> = k.iter().map(|x| phi(proj(&w.wk, x))).collect();
    let pv: Vec<Vec<f64>> = v.iter().map(|x| proj(&w.wv, x)).collect();
    q.iter()
        .map(|x| {
            let pq = phi(proj(&w.wq, x));
            let sims: Vec<f64> = pk.iter().map(|kk| pq.iter().zip(kk).map(|(a, b)| a * b).sum()).collect();
            let den = eps + sims.iter().sum::<f64>();
            let msg: Vec<f64> = (0..pv[0].len())
                .map(|c| sims.iter().zip(&pv).map(|(s, vv)| s * vv[c]).sum::<f64>() / den)
                .collect();
            (0..x.len()).map(|r| x[r] + (0..msg.len()).map(|c| w.wo[(r, c)] * msg[c]).sum::<f64>()).collect()
        })
        .collect()
}

fn linear_attention_oracle() -> Outcome {
    let mut rng = stream(3, StreamKind::Suite, 0);
    let mut worst = 0.0f64;
    let instances = 200;
    for i in 0..instances {
        let (nq, nk) = if i == 0 { (64, 64) } else { (rng.random_range(1..=64), rng.random_range(1..=64)) };
        let d = rng.random_range(1..=16);
        let mut m = || DMatrix::from_fn(d, d, |_, _| rng.random_range(-0.6..0.6));
        let w = AttentionWeights { wq: m(), wk: m(), wv: m(), wo: m() };
        let q = random_descs(&mut rng, nq, d);
        let k = random_descs(&mut rng, nk, d);
        let v = random_descs(&mut rng, nk, d);
        let eps = if i % 2 == 0 { 0.0 } else { 1e-6 };
        let fast = linear_attention(&q, &k, &v, &w, eps).unwrap().output;
        let slow = quadratic_attention(&q, &k, &v, &w, eps);
        for (a, b) in fast.iter().zip(&slow) {
            for (x, y) in a.iter().zip(b) {
                worst = worst.max((x - y).abs());
            }
        }
    }
    outcome(worst <= 1e-10, format!("max abs difference {worst:.2e} over {instances} instances up to 64x64"))
}

fn dual_softmax_contract() -> Outcome {
    let mut rng = stream(4, StreamKind::Suite, 0);
    let mut ok = true;
    let mut worst_shift = 0.0f64;
    for _ in 0..1000 {
        let (q, j) = (rng.random_range(1..=24), rng.random_range(1..=24));
        let scale = rng.random_range(0.1..30.0);
        let s = DMatrix::from_fn(q, j, |_, _| rng.random_range(-scale..scale));
        let c = dual_softmax(&ScoreMatrix(s.clone())).0;
        for r in 0..q {
            let row_max = s.row(r).max();
            let row_sum: f64 = s.row(r).iter().map(|x| (x - row_max).exp()).sum();
            for col in 0..j {
                let col_max = s.column(col).max();
                let col_sum: f64 = s.column(col).iter().map(|x| (x - col_max).exp()).sum();
                let row_p = (s[(r, col)] - row_max).exp() / row_sum;
                let col_p = (s[(r, col)] - col_max).exp() / col_sum;
                let x = c[(r, col)];
                ok &= (0.0..=1.0).contains(&x) && x <= row_p + 1e-12 && x <= col_p + 1e-12;
            }
        }
        let shift = rng.random_range(-100.0..100.0);
        let shifted = dual_softmax(&ScoreMatrix(s.add_scalar(shift))).0;
        worst_shift = worst_shift.max((shifted - &c).amax());
    }
    outcome(
        ok && worst_shift <= 1e-9,
        format!("1000 matrices, bounds {}, max shift deviation {worst_shift:.2e}", if ok { "hold" } else { "violated" }),
    )
}

fn training_sanity() -> Outcome {
    let scene = SceneConfig { num_points: 80, num_query_views: 4, ..SceneConfig::default() };
    let prepared = prepare_scene(&scene, &MapConfig::default()).unwrap();
    let matcher = MatcherConfig::default();
    let batch = training_samples(&prepared, matcher.track_sample, 0).unwrap();
    let tc = TrainConfig { steps: 50, learning_rate: 1e-2, batch_views: batch.len(), ..TrainConfig::default() };
    let a = train(&batch, &matcher, &tc).unwrap();
    let b = train(&batch, &matcher, &tc).unwrap();
    let initial = a.loss_curve[0];
    let (last, _) = loss_and_gradient(&batch, &a.weights, tc.focal_gamma).unwrap();
    let bits = |w: &MatcherWeights| w.to_flat().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let identical = bits(&a.weights) == bits(&b.weights);
    outcome(
        last < 0.5 * initial && identical,
        format!(
            "loss {initial:.4e} -> {last:.4e} (ratio {:.3}) on {} views, reruns {}",
            last / initial,
            batch.len(),
            if identical { "bit-identical" } else { "differ" }
        ),
    )
}

fn ablation_ordering() -> Outcome {
    let start = Instant::now();
    let suite = SuiteConfig::default();
    let (weights, _) = train_ablation_weights(&suite).unwrap();
    let (report, _) = run_ablation(&suite, &weights, &[Variant::Gat, Variant::MeanGnn, Variant::MeanNn]).unwrap();
    let r1 = |v: Variant| report.row(v.name()).unwrap().r1;
    let (gat, mean_gnn, mean_nn) = (r1(Variant::Gat), r1(Variant::MeanGnn), r1(Variant::MeanNn));
    let elapsed = start.elapsed();
    outcome(
        gat > mean_gnn && mean_gnn > mean_nn && gat - mean_nn >= 0.05 && within(elapsed, 600.0),
        format!(
            "recall@1cm-1deg gat {gat:.3} / mean-gnn {mean_gnn:.3} / mean-nn {mean_nn:.3}, {:.1} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn ransac_robustness() -> Outcome {
    let k = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640.0, 480.0).unwrap();
    let gt = RigidTransform::from_axis_angle(Vector3::new(0.2, 1.0, -0.3), 0.7, Vector3::new(0.05, -0.02, 0.9));
    let mut rng = stream(7, StreamKind::Suite, 0);
    let mut corrs = Vec::new();
    while corrs.len() < 14 {
        let p = Vector3::new(rng.random_range(-0.15..0.15), rng.random_range(-0.15..0.15), rng.random_range(-0.1..0.1));
        if let Some(px) = objpose::geometry::project(&k, &gt, &p) {
            corrs.push(Correspondence2D3D::new(px, p));
        }
    }
    for _ in 0..6 {
        let p = Vector3::new(rng.random_range(-0.15..0.15), rng.random_range(-0.15..0.15), rng.random_range(-0.1..0.1));
        let px = Pixel::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
        corrs.push(Correspondence2D3D::new(px, p));
    }
    let cfg = RansacConfig { iterations: 500, inlier_threshold_px: 2.0, seed: 11, ..RansacConfig::default() };
    match ransac_pnp(&corrs, &k, &cfg) {
        Ok(r) => {
            let (rot, t) = pose_delta(&r.pose, &gt);
            let outliers = r.inlier_indices.iter().filter(|&&i| i >= 14).count();
            outcome(
                rot <= 0.1 && t <= 1e-3 && outliers == 0,
                format!("{rot:.2e} deg / {t:.2e} units, {} inliers, {outliers} outliers kept", r.inlier_indices.len()),
            )
        }
        Err(e) => outcome(false, format!("solver failed: {e}")),
    }
}

fn forward_ms(q: usize, j: usize, weights: &MatcherWeights) -> f64 {
    let d = weights.config.descriptor_dim;
    let mut rng = stream(8, StreamKind::Suite, j as u64);
    let query: Vec<Descriptor> = (0..q).map(|_| random_unit(&mut rng, d)).collect();
    let points: Vec<Descriptor> = (0..j).map(|_| random_unit(&mut rng, d)).collect();
    let tracks: Vec<Vec<Descriptor>> = (0..j).map(|_| (0..8).map(|_| random_unit(&mut rng, d)).collect()).collect();
    let input = MatcherInput::new(&query, &points, &tracks, 8).unwrap();
    matcher_forward(&input, weights).unwrap();
    let mut times: Vec<f64> = (0..7)
        .map(|_| {
            let t = Instant::now();
            std::hint::black_box(matcher_forward(&input, weights).unwrap());
            t.elapsed().as_secs_f64() * 1e3
        })
        .collect();
    times.sort_by(f64::total_cmp);
    times[times.len() / 2]
}

fn linear_scaling() -> Outcome {
    let weights = MatcherWeights::random(&MatcherConfig::default(), 0).unwrap();
    let t: Vec<f64> = [512, 1024, 2048].iter().map(|&j| forward_ms(256, j, &weights)).collect();
    let (r1, r2) = (t[1] / t[0], t[2] / t[1]);
    outcome(
        r1 < 2.5 && r2 < 2.5,
        format!(
            "Q=256: J=512 {:.1} ms, 1024 {:.1} ms, 2048 {:.1} ms; ratios {r1:.2}, {r2:.2}",
            t[0], t[1], t[2]
        ),
    )
}

fn map_oracle() -> Outcome {
    let mut worst = 0.0f64;
    let mut counts_match = true;
    let mut detail = Vec::new();
    for seed in 0..3 {
        let cfg = SceneConfig { seed, ..SceneConfig::default() };
        let prepared = prepare_scene(&cfg, &MapConfig::default()).unwrap();
        let map = prepared.map.as_ref().unwrap();
        let mut seen = vec![0usize; prepared.scene.points.len()];
        for v in &prepared.map_views {
            for id in v.observation.gt_point_ids.iter().filter_map(|s| s.point_id()) {
                seen[id as usize] += 1;
            }
        }
        let expected = seen.iter().filter(|&&n| n >= 2).count();
        for (p, label) in map.points.iter().zip(&prepared.labels) {
            match label.and_then(|id| prepared.scene.point(id)) {
                Some(gt) => worst = worst.max((p.position - gt.position).norm()),
                None => worst = f64::INFINITY,
            }
        }
        counts_match &= map.len() == expected;
        detail.push(format!("{}/{}", map.len(), expected));
    }
    outcome(
        worst <= 1e-6 && counts_match,
        format!("max position error {worst:.2e}, map/visible counts {}", detail.join(" ")),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("oracle exactness", oracle_exactness),
        ("gradient fidelity", gradient_fidelity),
        ("linear-attention oracle", linear_attention_oracle),
        ("dual-softmax contract", dual_softmax_contract),
        ("training sanity", training_sanity),
        ("ablation ordering", ablation_ordering),
        ("ransac robustness", ransac_robustness),
        ("linear scaling", linear_scaling),
        ("map oracle", map_oracle),
    ];
    let only: Option<usize> = std::env::var("OBJPOSE_CRITERION").ok().and_then(|v| v.parse().ok());
    let strict = std::env::var("OBJPOSE_STRICT").is_ok_and(|v| v == "1");
    let mut unexpected = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let o = run();
        let expected_failure = EXPECTED_FAILURES.contains(&n);
        let tag = match (o.passed, expected_failure) {
            (true, _) => "PASS",
            (false, true) => "FAIL (expected)",
            (false, false) => "FAIL",
        };
        println!("criterion {n} [{name}]: {tag} - {}", o.detail);
        if !o.passed && (strict || !expected_failure) {
            unexpected += 1;
        }
    }
    if unexpected > 0 {
        eprintln!("{unexpected} criteria failed");
        std::process::exit(1);
    }
}
