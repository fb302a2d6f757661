use std::path::Path;
use std::process::{Command, Output};

fn objpose(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_objpose")).current_dir(dir).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn synth_and_map(dir: &Path, extra: &[&str]) {
    let mut args = vec!["synth", "--seed", "3", "--num-points", "120", "--query-views", "4", "-o", "scene.json"];
    args.extend_from_slice(extra);
    assert_eq!(code(&objpose(dir, &args)), 0);
    assert_eq!(code(&objpose(dir, &["map", "--scene", "scene.json", "-o", "map.json"])), 0);
}

#[test]
fn synth_map_localize_eval() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_and_map(d, &[]);
    let scene = std::fs::read_to_string(d.join("scene.json")).unwrap();
    assert!(scene.contains("\"kind\": \"scene\"") && scene.contains("\"version\": 1"));

    let o = objpose(d, &["localize", "--scene", "scene.json", "--map", "map.json", "--view", "20"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let pose: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(pose["status"], "success");
    assert!(pose["rot_err_deg"].as_f64().unwrap() < 0.01);
    assert!(pose["trans_err_units"].as_f64().unwrap() < 1e-4);

    let o = objpose(d, &["eval", "--scene", "scene.json", "--map", "map.json", "--variant", "kmeans-nn", "-o", "records.csv"]);
    assert_eq!(code(&o), 0);
    let csv = std::fs::read_to_string(d.join("records.csv")).unwrap();
    assert!(csv.starts_with("scene_seed,view_id,rot_err_deg,trans_err_units,num_matches,num_correct,num_inliers,status,ms\n"));
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn seeds_make_runs_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for (seed, out) in [("5", "a.json"), ("5", "b.json"), ("6", "c.json")] {
        assert_eq!(code(&objpose(d, &["synth", "--seed", seed, "--noisy", "-o", out])), 0);
    }
    let read = |f: &str| std::fs::read(d.join(f)).unwrap();
    assert_eq!(read("a.json"), read("b.json"));
    assert_ne!(read("a.json"), read("c.json"));
}

#[test]
fn train_writes_weights_and_loss_curve() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = objpose(d, &["train", "--seed", "1", "--scenes", "1", "--steps", "3", "-o", "w.bin", "--loss-csv", "loss.csv"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let loss = std::fs::read_to_string(d.join("loss.csv")).unwrap();
    assert_eq!(loss.lines().next(), Some("step,loss"));
    assert_eq!(loss.lines().count(), 4);

    synth_and_map(d, &[]);
    let o = objpose(d, &["eval", "--scene", "scene.json", "--map", "map.json", "--variant", "gat", "--weights", "w.bin"]);
    assert_eq!(code(&o), 0);
    // attention weights do not fit the mean-aggregation variant
    let o = objpose(d, &["eval", "--scene", "scene.json", "--map", "map.json", "--variant", "mean-gnn", "--weights", "w.bin"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn ablate_single_variant_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = objpose(dir.path(), &["ablate", "--scenes", "1", "--variants", "mean-nn"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("variant,r1,r3,r5,matches,ms"));
    assert!(lines.next().unwrap().starts_with("mean-nn,"));
    assert_eq!(lines.next(), None);
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = objpose(dir.path(), &["gradcheck", "--seed", "0", "--count", "1"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("ok"));
}

#[test]
fn validation_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&objpose(d, &["synth", "-o", "x.json", "--clutter-rate", "1.5"])), 2);
    assert_eq!(code(&objpose(d, &["map", "--scene", "missing.json", "-o", "m.json"])), 2);
    assert_eq!(code(&objpose(d, &["nonsense"])), 2);
    assert_eq!(code(&objpose(d, &["ablate", "--variants", "bogus"])), 2);
    synth_and_map(d, &[]);
    // a map file is not a scene file
    assert_eq!(code(&objpose(d, &["map", "--scene", "map.json", "-o", "m2.json"])), 2);
    assert_eq!(code(&objpose(d, &["localize", "--scene", "scene.json", "--map", "map.json", "--view", "999"])), 2);
}

#[test]
fn numerical_failures_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // descriptors this noisy leave too few consistent tracks for a map
    assert_eq!(code(&objpose(d, &["synth", "--num-points", "8", "--sigma-desc", "5", "-o", "s.json"])), 0);
    let o = objpose(d, &["map", "--scene", "s.json", "-o", "m.json"]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}
