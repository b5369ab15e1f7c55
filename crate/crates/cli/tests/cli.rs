use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use doglegs::dataset_io::{save_config, RunConfig};

fn doglegs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_doglegs")).args(args).output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn short_config(dir: &Path) -> PathBuf {
    let mut cfg = RunConfig::new(4);
    cfg.gait.duration = 6.0;
    cfg.gait.seed = 3;
    cfg.run.rpe_delta = 1.0;
    let file = dir.join("short.toml");
    save_config(&file, &cfg).unwrap();
    file
}

fn read(p: PathBuf) -> Vec<u8> {
    std::fs::read(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn json(p: PathBuf) -> serde_json::Value {
    serde_json::from_slice(&read(p)).unwrap()
}

#[test]
fn simulate_run_eval_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = short_config(tmp.path());
    let data = tmp.path().join("data");
    let run = tmp.path().join("run");
    let eval = tmp.path().join("eval");

    let out = doglegs(&["simulate", "--config", path(&cfg), "--out", path(&data)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = doglegs(&["run", "--estimator", "doglegs", "--dataset", path(&data), "--out", path(&run)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let summary = json(run.join("summary.json"));
    assert_eq!(summary["estimator"], "doglegs");
    assert_eq!(summary["dataset"], "sim-seed3");
    for k in ["predict_ms", "update_ms", "total_ms"] {
        assert!(summary["timing"][k].as_f64().unwrap() >= 0.0);
    }
    assert!(summary["metrics"]["ape_tra"].as_f64().unwrap() > 0.0);

    let truth = data.join("truth_body.csv");
    let out = doglegs(&[
        "eval",
        "--estimate",
        path(&run.join("trajectory.csv")),
        "--reference",
        path(&truth),
        "--out",
        path(&eval),
        "--rpe-delta",
        "1.0",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = json(eval.join("metrics.json"));
    let ape = metrics["ape_tra"].as_f64().unwrap();
    assert!(ape > 0.0 && ape < 0.5, "APE {ape}");
    // The run summary and the standalone evaluation agree.
    assert_eq!(metrics["ape_tra"], summary["metrics"]["ape_tra"]);
    let errors = String::from_utf8(read(eval.join("pose_errors.csv"))).unwrap();
    assert!(errors.lines().count() > 100);
    let manifest = json(eval.join("output_manifest.json"));
    assert_eq!(manifest["files"].as_array().unwrap().len(), 2);
}

#[test]
fn reruns_are_bit_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = short_config(tmp.path());
    let runs: Vec<PathBuf> = ["a", "b"].iter().map(|d| tmp.path().join(d)).collect();
    for r in &runs {
        let out = doglegs(&["run", "--config", path(&cfg), "--estimator", "legodom", "--out", path(r)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["trajectory.csv", "events.csv", "pose_errors.csv", "output_manifest.json"] {
        assert_eq!(read(runs[0].join(f)), read(runs[1].join(f)), "{f} differs");
    }
    let (a, b) = (json(runs[0].join("summary.json")), json(runs[1].join("summary.json")));
    assert_eq!(a["config_hash"], b["config_hash"]);
    assert_eq!(a["metrics"], b["metrics"]);
}

#[test]
fn parallel_seeds_match_sequential_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = short_config(tmp.path());
    let par = tmp.path().join("par");
    let out = doglegs(&[
        "run", "--config", path(&cfg), "--estimator", "footins:1", "--seed", "7", "--runs", "2", "--jobs", "2", "--out",
        path(&par),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let single = tmp.path().join("single");
    let out = doglegs(&[
        "run", "--config", path(&cfg), "--estimator", "footins:1", "--seed", "8", "--out", path(&single),
    ]);
    assert!(out.status.success());
    assert_eq!(read(par.join("seed_8/trajectory.csv")), read(single.join("trajectory.csv")));
    assert_ne!(read(par.join("seed_7/trajectory.csv")), read(par.join("seed_8/trajectory.csv")));
    assert_eq!(json(par.join("seed_7/summary.json"))["seed"], 7);
}

#[test]
fn detect_contact_writes_intervals() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = short_config(tmp.path());
    let data = tmp.path().join("data");
    assert!(doglegs(&["simulate", "--config", path(&cfg), "--out", path(&data)]).status.success());
    let out_dir = tmp.path().join("contacts");
    let out = doglegs(&["detect-contact", "--dataset", path(&data), "--out", path(&out_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(read(out_dir.join("contacts.csv"))).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("leg_id,t_start,t_end"));
    let mut per_leg = [0usize; 4];
    for l in lines {
        let f: Vec<&str> = l.split(',').collect();
        let leg: usize = f[0].parse().unwrap();
        let (t0, t1): (f64, f64) = (f[1].parse().unwrap(), f[2].parse().unwrap());
        assert!(t1 >= t0);
        per_leg[leg] += 1;
    }
    // Six seconds of walking at a 0.8 s cycle: several stances per leg.
    assert!(per_leg.iter().all(|&n| n >= 5), "{per_leg:?}");
}

#[test]
fn exit_codes_separate_config_and_runtime_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "[filter]\nn_legs = 4\nbogus = 1\n").unwrap();
    let out = doglegs(&["simulate", "--config", path(&bad), "--out", path(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["kind"], "config");

    let out = doglegs(&["run", "--estimator", "nope", "--out", path(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));

    let missing = tmp.path().join("missing");
    let out = doglegs(&["run", "--dataset", path(&missing), "--out", path(tmp.path())]);
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["kind"], "runtime");

    assert_eq!(doglegs(&["frobnicate"]).status.code(), Some(2));
}
