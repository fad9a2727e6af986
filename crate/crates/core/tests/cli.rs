use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sphere2vec"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = bin(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn rows(s: &str) -> Vec<&str> {
    s.lines().filter(|l| !l.starts_with('#')).collect()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// synth + a small, fast training run; returns (data dir, run dir).
fn small_run(root: &Path, seed: &str) -> (std::path::PathBuf, std::path::PathBuf) {
    let data = root.join("data");
    let run = root.join(format!("run{seed}"));
    ok(&["synth", "--preset", "antipodal", "--points-per-class", "200", "--seed", seed, "--out", p(&data)]);
    ok(&[
        "train", "--data", p(&data.join("train.csv")), "--profile", "synthetic", "--scales", "8",
        "--hidden-dim", "32", "--epochs", "6", "--batch-size", "64", "--seed", seed, "--out", p(&run),
    ]);
    (data, run)
}

#[test]
fn encode_prints_one_row_per_point() {
    let s = ok(&["encode", "--variant", "sphereC", "--scales", "1", "--lon", "0", "--lat", "0"]);
    assert_eq!(rows(&s), vec!["0,1,0"]);
    let s = ok(&["encode", "--variant", "sphereDFS", "--scales", "8", "--lon", "100", "--lat", "-20"]);
    assert_eq!(rows(&s)[0].split(',').count(), 288);
}

#[test]
fn encode_csv_input_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("pts.csv");
    fs::write(&csv, "# classes: 1\nsample_id,lon_deg,lat_deg,class_id\na,0,0,0\nb,540,10,0\nc,-75.5,44.25,0\n").unwrap();
    let args = ["encode", "--variant", "sphereM", "--scales", "4", "--csv", p(&csv)];
    let first = ok(&args);
    assert_eq!(first, ok(&args));
    let r = rows(&first);
    assert_eq!(r.len(), 3);
    assert!(r.iter().all(|row| row.split(',').count() == 20));

    let out_dir = dir.path().join("enc");
    ok(&["encode", "--variant", "grid", "--scales", "2", "--csv", p(&csv), "--out", p(&out_dir)]);
    let written = fs::read_to_string(out_dir.join("encodings.csv")).unwrap();
    assert_eq!(written.lines().count(), 3);
    assert!(out_dir.join("meta.json").exists());
}

#[test]
fn errors_are_one_machine_parsable_line() {
    let out = bin(&["encode", "--variant", "sphereC", "--lon", "0", "--lat", "91"]);
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1);
    assert!(err.starts_with("ERROR LAT_OUT_OF_RANGE: "), "{err}");

    let out = bin(&["encode", "--variant", "sphereQ", "--lon", "0", "--lat", "0"]);
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("ERROR INVALID_CONFIG: "));

    let out = bin(&["train", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("ERROR USAGE: ") && err.lines().count() == 1, "{err}");

    let out = bin(&["eval", "--checkpoint", "/nonexistent/ck.json", "--data", "x.csv", "--out", "/tmp/x"]);
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("ERROR IO_ERROR: "));
}

#[test]
fn train_writes_history_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (data, run) = small_run(dir.path(), "7");
    let loss = fs::read_to_string(run.join("loss.csv")).unwrap();
    let lines: Vec<&str> = loss.lines().collect();
    assert_eq!(lines[0], "epoch,loss");
    assert_eq!(lines.len(), 1 + 6);
    let first: f64 = lines[1].split(',').nth(1).unwrap().parse().unwrap();
    let last: f64 = lines[6].split(',').nth(1).unwrap().parse().unwrap();
    assert!(last < first, "loss {first} -> {last}");

    let again = dir.path().join("again");
    ok(&[
        "train", "--data", p(&data.join("train.csv")), "--profile", "synthetic", "--scales", "8",
        "--hidden-dim", "32", "--epochs", "6", "--batch-size", "64", "--seed", "7", "--out", p(&again),
    ]);
    assert_eq!(
        fs::read(run.join("checkpoint.json")).unwrap(),
        fs::read(again.join("checkpoint.json")).unwrap()
    );

    // meta.json alone reproduces the run
    let replay = dir.path().join("replay");
    ok(&["train", "--config", p(&run.join("meta.json")), "--out", p(&replay)]);
    assert_eq!(
        fs::read(run.join("checkpoint.json")).unwrap(),
        fs::read(replay.join("checkpoint.json")).unwrap()
    );
}

#[test]
fn echo_reports_resolved_values() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"profile": "inat2017", "epochs": 1, "hidden_dim": 8}"#).unwrap();
    let data = dir.path().join("d");
    ok(&["synth", "--points-per-class", "20", "--out", p(&data)]);
    let s = ok(&[
        "train", "--config", p(&cfg), "--data", p(&data.join("train.csv")), "--learning-rate", "0.01",
        "--out", p(&dir.path().join("r")),
    ]);
    let line = s.lines().next().unwrap();
    let json: serde_json::Value = serde_json::from_str(line.trim_start_matches("# config: ")).unwrap();
    let c = &json["config"];
    assert_eq!(c["learning_rate"], 0.01);
    assert_eq!(c["r_min"], 0.01);
    assert_eq!(c["hidden_dim"], 8);
    assert_eq!(c["embed_dim"], 8);
    assert_eq!(c["scales"], 32);
    assert_eq!(c["beta"], 2.0);
    assert_eq!(c["epochs"], 1);
}

#[test]
fn eval_reports_and_image_combination() {
    let dir = tempfile::tempdir().unwrap();
    let (data, run) = small_run(dir.path(), "3");
    let ck = run.join("checkpoint.json");
    let test = data.join("test.csv");

    let loc = dir.path().join("loc");
    ok(&["eval", "--checkpoint", p(&ck), "--data", p(&test), "--out", p(&loc)]);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(loc.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["mode"], "location");
    assert_eq!(report["n_samples"], 80);
    assert_eq!(fs::read_to_string(loc.join("bands.csv")).unwrap().lines().count(), 1 + 18);
    assert_eq!(fs::read_to_string(loc.join("cells.csv")).unwrap().lines().count(), 1 + 48);

    // uniform image probabilities leave the ranking unchanged
    let ids: Vec<String> = fs::read_to_string(&test)
        .unwrap()
        .lines()
        .skip(2)
        .map(|l| l.split(',').next().unwrap().to_string())
        .collect();
    let probs: serde_json::Map<String, serde_json::Value> =
        ids.iter().map(|id| (id.clone(), serde_json::json!([0.5, 0.5]))).collect();
    let probs_path = dir.path().join("probs.json");
    fs::write(&probs_path, serde_json::to_string(&probs).unwrap()).unwrap();
    let comb = dir.path().join("comb");
    ok(&[
        "eval", "--checkpoint", p(&ck), "--data", p(&test), "--image-probs", p(&probs_path),
        "--baseline", p(&loc.join("report.json")), "--out", p(&comb),
    ]);
    let combined: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(comb.join("report.json")).unwrap()).unwrap();
    assert_eq!(combined["mode"], "combined");
    assert_eq!(combined["overall_mrr"], report["overall_mrr"]);
    let delta = fs::read_to_string(comb.join("cell_delta.csv")).unwrap();
    assert!(delta.lines().skip(1).all(|l| {
        let d = l.split(',').nth(4).unwrap();
        d.is_empty() || d == "0"
    }));

    let clustered = dir.path().join("clustered");
    ok(&[
        "eval", "--checkpoint", p(&ck), "--data", p(&test), "--clusters", "5", "--grid", "30",
        "--out", p(&clustered),
    ]);
    let labels = fs::read_to_string(clustered.join("clusters.csv")).unwrap();
    assert_eq!(labels.lines().count(), 1 + 72);

    // byte-identical reports on rerun
    let loc2 = dir.path().join("loc2");
    ok(&["eval", "--checkpoint", p(&ck), "--data", p(&test), "--out", p(&loc2)]);
    for f in ["report.json", "bands.csv", "cells.csv"] {
        assert_eq!(fs::read(loc.join(f)).unwrap(), fs::read(loc2.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn cluster_and_synth_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (data, run) = small_run(dir.path(), "11");
    let train = fs::read_to_string(data.join("train.csv")).unwrap();
    assert!(train.starts_with("# classes: 2\n"));
    assert_eq!(train.lines().count(), 2 + 320);
    assert!(data.join("mixture.json").exists() && data.join("meta.json").exists());

    let out = dir.path().join("clusters");
    ok(&["cluster", "--checkpoint", p(&run.join("checkpoint.json")), "--clusters", "4", "--grid", "45", "--out", p(&out)]);
    let csv = fs::read_to_string(out.join("clusters.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 8 * 4);
    let labels: std::collections::BTreeSet<&str> =
        csv.lines().skip(1).map(|l| l.rsplit(',').next().unwrap()).collect();
    assert_eq!(labels.len(), 4);
}
