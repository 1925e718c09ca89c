use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const FRAME: [&str; 8] = ["--y-min", "1982", "--y-max", "1992.5", "--a-min", "25", "--a-max", "64"];

fn drm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drm")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = drm(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn error_of(out: &Output) -> (i32, String) {
    let line = String::from_utf8_lossy(&out.stderr);
    let record: Value = serde_json::from_str(line.trim()).expect("machine-readable error");
    (out.status.code().unwrap(), record["error"].as_str().unwrap().to_string())
}

fn simulate(dir: &Path, spec: &str, seed: &str, out: &str) -> String {
    let spec_path = dir.join(format!("{out}.json"));
    fs::write(&spec_path, spec).unwrap();
    let out_dir = dir.join(out);
    let mut args = vec!["simulate", "--spec", spec_path.to_str().unwrap(), "--seed", seed, "--out", out_dir.to_str().unwrap()];
    args.extend(FRAME);
    ok(&args);
    out_dir.join("data.csv").to_str().unwrap().to_string()
}

fn analyze(input: &str, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["analyze", "--input", input, "--out", out.to_str().unwrap()];
    args.extend(FRAME);
    args.extend(extra);
    drm(&args)
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect()
}

const WAVES: &str = r#"{"v0": 24.0, "u": 0.1, "waves": [0, 5, 10], "fractions": [0.05, 0.15, 0.25], "repeats": 10, "noise_sd": 3.5}"#;

#[test]
fn analysis_artifacts_are_complete_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), WAVES, "5", "sim");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = analyze(&data, out, &["--min-cell-count", "10"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for name in ["levels.csv", "ctrends.csv", "clusters.csv", "comparisons.csv", "run.json", "observed_means.csv"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name} differs");
    }
    assert_eq!(csv_rows(&a.join("levels.csv")).len(), 12 * 41);
    assert_eq!(csv_rows(&a.join("ctrends.csv")).len(), 11 * 40);
    assert_eq!(csv_rows(&a.join("clusters.csv")).len(), 3 * 8);
    assert_eq!(csv_rows(&a.join("comparisons.csv")).len(), 3 * 7 + 2 * 8);
    assert_eq!(csv_rows(&a.join("observed_means.csv")).len(), 3 * 40);
    let header = fs::read_to_string(a.join("levels.csv")).unwrap();
    assert!(header.starts_with("year,age,estimate,stderr,ci_lo,ci_hi\n1982,25,"));

    let run: Value = serde_json::from_str(&fs::read_to_string(a.join("run.json")).unwrap()).unwrap();
    assert_eq!(run["converged"], true);
    assert_eq!(run["tuner"], "converged");
    assert_eq!(run["validation"]["accepted"], 3600);
    for (k, t) in [("stat_v", 0.2f64), ("stat_u", 0.2)] {
        assert!((run[k].as_f64().unwrap().ln() - t.ln()).abs() <= 0.05);
    }
}

#[test]
fn fixed_lambdas_skip_the_tuner_and_config_files_work() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), WAVES, "6", "sim");
    let cfg = dir.path().join("run.ini");
    fs::write(&cfg, "# fixed smoothing\nlambda1 = 10\nlambda2 = 1000\ndelta_a = 10\ndelta_y = 4\nmode = raw\n").unwrap();
    let out = dir.path().join("fixed");
    let o = analyze(&data, &out, &["--config", cfg.to_str().unwrap(), "--lambda2", "2000"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let run: Value = serde_json::from_str(&fs::read_to_string(out.join("run.json")).unwrap()).unwrap();
    assert_eq!(run["tuner"], "skipped");
    assert_eq!(run["converged"], false);
    assert_eq!((run["lambda1"].as_f64(), run["lambda2"].as_f64()), (Some(10.0), Some(2000.0)));
    assert_eq!(run["mode"], "raw");
    assert_eq!(csv_rows(&out.join("clusters.csv")).len(), 3 * 4);
    assert!(!out.join("observed_means.csv").exists());
}

#[test]
fn errors_carry_categories_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.csv");
    fs::write(&empty, "").unwrap();
    let o = analyze(empty.to_str().unwrap(), &dir.path().join("x"), &[]);
    assert_eq!(error_of(&o), (3, "no-observations".into()));

    let header_only = dir.path().join("header.csv");
    fs::write(&header_only, "x,year,age\n30,1970.5,40\n").unwrap();
    let o = analyze(header_only.to_str().unwrap(), &dir.path().join("x"), &[]);
    assert_eq!(error_of(&o), (3, "no-observations".into()));

    let o = analyze(empty.to_str().unwrap(), &dir.path().join("x"), &["--f-smv", "0"]);
    assert_eq!(error_of(&o), (2, "config".into()));
    let o = analyze(dir.path().join("missing.csv").to_str().unwrap(), &dir.path().join("x"), &[]);
    assert_eq!(error_of(&o), (3, "io".into()));

    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"v0": [1.0, 2.0], "u": 0.1, "fractions": [0.1], "repeats": 1, "noise_sd": 0}"#).unwrap();
    let mut args = vec!["simulate", "--spec", bad.to_str().unwrap(), "--out", dir.path().to_str().unwrap()];
    args.extend(FRAME);
    assert_eq!(error_of(&drm(&args)), (2, "spec-mismatch".into()));
}

#[test]
fn simulation_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = simulate(dir.path(), WAVES, "11", "a");
    let b = simulate(dir.path(), WAVES, "11", "b");
    let c = simulate(dir.path(), WAVES, "12", "c");
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
    let truth: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("a/truth.json")).unwrap()).unwrap();
    assert_eq!(truth["z"].as_array().unwrap().len(), 492);
}

#[test]
fn zero_noise_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let spec = r#"{"v0": 24.0, "u": 0.1, "steps": [{"years": [2, 6], "ages": [3, 20], "delta": 0.05}],
                   "fractions": [0.1, 0.4], "repeats": 1, "noise_sd": 0.0}"#;
    let data = simulate(dir.path(), spec, "1", "sim");
    let truth: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("sim/truth.json")).unwrap()).unwrap();

    // Without any smoothing the two corner levels no observation reaches stay undetermined.
    let o = analyze(&data, &dir.path().join("exact"), &["--lambda1", "0", "--lambda2", "0", "--mode", "raw"]);
    assert_eq!(error_of(&o), (4, "singular-system".into()));

    // A vanishing penalty pins those two corners and biases the rest by O(lambda). Raw mode
    // keeps the within-cell slope that cell means would average away.
    let out = dir.path().join("tiny");
    let o = analyze(&data, &out, &["--lambda1", "1e-9", "--lambda2", "1e-9", "--mode", "raw"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let trends = csv_rows(&out.join("ctrends.csv"));
    let want: Vec<f64> = truth["trends"].as_array().unwrap().iter().flat_map(|r| r.as_array().unwrap().clone()).map(|v| v.as_f64().unwrap()).collect();
    for (row, w) in trends.iter().zip(&want) {
        assert!((row[2].parse::<f64>().unwrap() - w).abs() < 1e-7, "{row:?} vs {w}");
    }
    let levels = csv_rows(&out.join("levels.csv"));
    let want: Vec<Vec<f64>> = truth["levels"].as_array().unwrap().iter().map(|r| r.as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect()).collect();
    let (nr, nc) = (want.len(), want[0].len());
    for (k, row) in levels.iter().enumerate() {
        let (i, j) = (k / nc, k % nc);
        let corner = (i == nr - 1 && j == 0) || (i == 0 && j == nc - 1);
        if !corner {
            assert!((row[2].parse::<f64>().unwrap() - want[i][j]).abs() < 1e-7, "({i}, {j}) {row:?}");
        }
    }
}

#[test]
fn stepped_trends_are_detected() {
    let dir = tempfile::tempdir().unwrap();
    // Relative years 5-9 at relative ages 10-14: cluster (1, 2) against (0, 2).
    let spec = r#"{"v0": 24.0, "u": 0.1, "steps": [{"years": [5, 9], "ages": [10, 14], "delta": -1.0}],
                   "waves": [0, 5, 10], "fractions": [0.05, 0.15, 0.25], "repeats": 10, "noise_sd": 3.5}"#;
    let data = simulate(dir.path(), spec, "8", "sim");
    let out = dir.path().join("res");
    let o = analyze(&data, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&out.join("comparisons.csv"));
    let hit = rows.iter().find(|r| r[..5] == ["0", "2", "1", "2", "year"]).unwrap();
    assert!(hit[5].parse::<f64>().unwrap() > 0.0);
    assert!(hit[8].parse::<f64>().unwrap() < 0.05, "{hit:?}");
}

#[test]
fn aggregate_writes_cell_summaries() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), WAVES, "2", "sim");
    let out = dir.path().join("agg");
    let mut args = vec!["aggregate", "--input", &data, "--out", out.to_str().unwrap()];
    args.extend(FRAME);
    ok(&args);
    let rows = csv_rows(&out.join("cells.csv"));
    assert_eq!(rows.len(), 120);
    assert!(rows.iter().all(|r| r[4] == "30"));
    assert!(out.join("validation.json").exists());
}
