//! End-to-end runs of the binary: every command writes its artifacts plus a
//! manifest, and `rerun` reproduces the artifacts byte-identically.

use incbounds::oracle::AnalyticDgp;
use incbounds::sim::generate;
use incbounds::t2::random_binary_model;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_incbounds"))
}

fn run_ok(args: &[&str]) -> String {
    let out = bin().args(args).output().expect("binary runs");
    assert!(
        out.status.success(),
        "command {:?} failed:\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Write a small analytic-design dataset as CSV, with a couple of missing
/// covariate cells to exercise the indicator path.
fn write_dataset(path: &Path, n: usize, seed: u64) {
    let data = generate(&AnalyticDgp::standard(), n, seed).unwrap();
    let mut text = String::from("x,a,y\n");
    for (i, r) in data.records().iter().enumerate() {
        let x = if i % 97 == 13 { "NA".to_string() } else { format!("{}", r.covariates()[0]) };
        text.push_str(&format!("{x},{},{}\n", r.treatment(), r.outcome()));
    }
    fs::write(path, text).unwrap();
}

fn rerun_and_verify(manifest: &Path, out: &Path) {
    let stdout = run_ok(&[
        "rerun",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(stdout.contains("byte-identically"), "rerun output: {stdout}");
}

#[test]
fn estimate_end_to_end_and_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("data.csv");
    write_dataset(&csv, 400, 11);
    let out1 = dir.path().join("run1");
    run_ok(&[
        "estimate",
        "--input",
        csv.to_str().unwrap(),
        "--outcome",
        "y",
        "--treatment",
        "a",
        "--covariates",
        "x",
        "--delta",
        "2",
        "--gamma",
        "2",
        "--folds",
        "4",
        "--seed",
        "3",
        "--out",
        out1.to_str().unwrap(),
    ]);
    let result: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out1.join("estimate.json")).unwrap()).unwrap();
    let lo = result["estimate"]["psi_lower"].as_f64().unwrap();
    let hi = result["estimate"]["psi_upper"].as_f64().unwrap();
    assert!(lo <= hi && lo.is_finite());
    // the NA cells produced an indicator column
    assert_eq!(result["ingest"]["augmented_columns"][0], "x_missing");

    rerun_and_verify(&out1.join("estimate_manifest.json"), &dir.path().join("run2"));
}

#[test]
fn manifest_hash_tracks_config_and_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("data.csv");
    write_dataset(&csv, 200, 5);
    let out = dir.path().join("out");
    let args = |delta: &str, out: &Path| -> Vec<String> {
        [
            "estimate",
            "--input",
            csv.to_str().unwrap(),
            "--outcome",
            "y",
            "--treatment",
            "a",
            "--covariates",
            "x",
            "--delta",
            delta,
            "--folds",
            "3",
            "--out",
            out.to_str().unwrap(),
        ]
        .iter()
        .map(|s| s.to_string())
        .collect()
    };

    let argv: Vec<String> = args("1.5", &out);
    run_ok(&argv.iter().map(String::as_str).collect::<Vec<_>>());
    let first = fs::read(out.join("estimate_manifest.json")).unwrap();

    // identical run into the same directory: identical manifest bytes
    run_ok(&argv.iter().map(String::as_str).collect::<Vec<_>>());
    let again = fs::read(out.join("estimate_manifest.json")).unwrap();
    assert_eq!(first, again, "manifest not reproducible for identical config");

    // a config change flips the manifest
    let argv2: Vec<String> = args("2.5", &out);
    run_ok(&argv2.iter().map(String::as_str).collect::<Vec<_>>());
    let changed = fs::read(out.join("estimate_manifest.json")).unwrap();
    assert_ne!(first, changed, "manifest ignored a config change");

    // an input change flips the manifest too
    let mut content = fs::read_to_string(&csv).unwrap();
    content.push_str("0.5,1,1.25\n");
    fs::write(&csv, content).unwrap();
    run_ok(&argv.iter().map(String::as_str).collect::<Vec<_>>());
    let input_changed = fs::read(out.join("estimate_manifest.json")).unwrap();
    assert_ne!(first, input_changed, "manifest ignored an input change");
}

#[test]
fn curve_end_to_end_collapses_at_gamma_one() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("data.csv");
    write_dataset(&csv, 400, 23);
    let out = dir.path().join("out");
    run_ok(&[
        "curve",
        "--input",
        csv.to_str().unwrap(),
        "--outcome",
        "y",
        "--treatment",
        "a",
        "--covariates",
        "x",
        "--delta-grid",
        "0.5,1,2",
        "--gamma-grid",
        "1,2",
        "--folds",
        "4",
        "--seed",
        "9",
        "--svg",
        "--out",
        out.to_str().unwrap(),
    ]);
    let text = fs::read_to_string(out.join("curve.csv")).unwrap();
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader.headers().unwrap().clone();
    assert_eq!(&headers[0], "delta");
    let mut rows = 0;
    let mut gamma1: Vec<(String, f64, f64)> = Vec::new();
    for record in reader.records() {
        let r = record.unwrap();
        rows += 1;
        let psi: f64 = r[3].parse().unwrap();
        assert!(psi.is_finite(), "psi must round-trip through the CSV");
        if r[1].parse::<f64>().unwrap() == 1.0 && &r[2] != "point" {
            gamma1.push((r[0].to_string(), r[1].parse().unwrap(), psi));
        }
    }
    // 3 deltas x 2 gammas x 2 sides + 3 point rows
    assert_eq!(rows, 15);
    // gamma = 1 rows collapse: lower equals upper per delta
    for pair in gamma1.chunks(2) {
        assert_eq!(pair[0].2, pair[1].2, "gamma-1 bounds fail to collapse in the CSV");
    }
    assert!(out.join("curve.svg").exists());

    rerun_and_verify(&out.join("curve_manifest.json"), &dir.path().join("replay"));
}

#[test]
fn simulate_figure1_writes_three_panels() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fig1");
    run_ok(&[
        "simulate",
        "figure1",
        "--gamma-grid",
        "2",
        "--delta-grid",
        "log:0.1:10:9",
        "--out",
        out.to_str().unwrap(),
    ]);
    for panel in ["a", "b", "c"] {
        let path = out.join(format!("figure1_panel_{panel}.csv"));
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.lines().count() > 9, "panel {panel} too small");
    }
    let expected = ["decreasing", "increasing", "u_shaped"];
    for (panel, want) in ["a", "b", "c"].iter().zip(expected) {
        let text = fs::read_to_string(out.join(format!("figure1_panel_{panel}.csv"))).unwrap();
        assert!(text.contains(want), "panel {panel} missing pattern {want}");
    }
    rerun_and_verify(&out.join("figure1_manifest.json"), &dir.path().join("fig1b"));
}

#[test]
fn simulate_bias_and_coverage_small() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bias");
    run_ok(&[
        "simulate",
        "bias",
        "--n",
        "150",
        "--reps",
        "6",
        "--alphas",
        "0.2,0.4",
        "--seed",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    let text = fs::read_to_string(out.join("bias.csv")).unwrap();
    // header + 2 alphas x 2 estimators x 2 sides
    assert_eq!(text.lines().count(), 9);
    rerun_and_verify(&out.join("bias_manifest.json"), &dir.path().join("bias2"));

    let cov_out = dir.path().join("cov");
    run_ok(&[
        "simulate",
        "coverage",
        "--n",
        "200",
        "--reps",
        "20",
        "--seed",
        "4",
        "--out",
        cov_out.to_str().unwrap(),
    ]);
    let text = fs::read_to_string(cov_out.join("coverage.csv")).unwrap();
    assert_eq!(text.lines().count(), 3);
}

fn write_model(dir: &Path) -> PathBuf {
    let model = random_binary_model(31);
    let path = dir.join("model.json");
    fs::write(&path, serde_json::to_string_pretty(&model).unwrap()).unwrap();
    path
}

#[test]
fn t2_sharp_bounds_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let model = write_model(dir.path());
    let out = dir.path().join("t2");
    run_ok(&[
        "t2",
        "sharp-bounds",
        "--model",
        model.to_str().unwrap(),
        "--delta",
        "2",
        "--lambda1",
        "2",
        "--lambda2",
        "2",
        "--restarts",
        "6",
        "--out",
        out.to_str().unwrap(),
    ]);
    let result: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("t2_bounds.json")).unwrap()).unwrap();
    let lower = result["lower"].as_f64().unwrap();
    let upper = result["upper"].as_f64().unwrap();
    let g = result["gformula"].as_f64().unwrap();
    assert!(lower <= g + 1e-9 && g <= upper + 1e-9, "g-formula escapes [{lower}, {upper}]");

    // cap 1 collapses onto the g-formula point
    let collapsed = dir.path().join("t2_collapsed");
    run_ok(&[
        "t2",
        "sharp-bounds",
        "--model",
        model.to_str().unwrap(),
        "--delta",
        "2",
        "--out",
        collapsed.to_str().unwrap(),
    ]);
    let result: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(collapsed.join("t2_bounds.json")).unwrap(),
    )
    .unwrap();
    let lo = result["lower"].as_f64().unwrap();
    let hi = result["upper"].as_f64().unwrap();
    let g = result["gformula"].as_f64().unwrap();
    assert!((lo - g).abs() <= 1e-10 && (hi - g).abs() <= 1e-10);

    rerun_and_verify(&out.join("t2_bounds_manifest.json"), &dir.path().join("t2b"));

    // brute-force oracle agrees within the grid tolerance
    let brute = dir.path().join("brute");
    run_ok(&[
        "t2",
        "brute-force",
        "--model",
        model.to_str().unwrap(),
        "--delta",
        "2",
        "--lambda1",
        "2",
        "--lambda2",
        "2",
        "--grid-step",
        "0.02",
        "--out",
        brute.to_str().unwrap(),
    ]);
    let b: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(brute.join("t2_brute.json")).unwrap()).unwrap();
    assert!((b["lower"].as_f64().unwrap() - lower).abs() < 0.03);
    assert!((b["upper"].as_f64().unwrap() - upper).abs() < 0.03);
}

/// Criterion 9: every estimation and simulation command produces
/// manifest-reproducible artifacts, and replaying any manifest yields
/// byte-identical outputs.
#[test]
fn criterion_9_cli_manifest_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("data.csv");
    write_dataset(&csv, 300, 7);
    let model = write_model(dir.path());
    let data_args = [
        "--input",
        csv.to_str().unwrap(),
        "--outcome",
        "y",
        "--treatment",
        "a",
        "--covariates",
        "x",
    ];

    let mut manifests: Vec<(String, PathBuf)> = Vec::new();
    let out = dir.path().join("estimate");
    let mut argv = vec!["estimate"];
    argv.extend(data_args);
    argv.extend(["--delta", "2", "--gamma", "2", "--folds", "3", "--out", out.to_str().unwrap()]);
    run_ok(&argv);
    manifests.push(("estimate".into(), out.join("estimate_manifest.json")));

    let out = dir.path().join("curve");
    let mut argv = vec!["curve"];
    argv.extend(data_args);
    argv.extend([
        "--delta-grid",
        "0.5,2",
        "--gamma-grid",
        "1,2",
        "--folds",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    run_ok(&argv);
    manifests.push(("curve".into(), out.join("curve_manifest.json")));

    let out = dir.path().join("figure1");
    run_ok(&[
        "simulate",
        "figure1",
        "--gamma-grid",
        "2",
        "--delta-grid",
        "log:0.2:5:7",
        "--out",
        out.to_str().unwrap(),
    ]);
    manifests.push(("simulate figure1".into(), out.join("figure1_manifest.json")));

    let out = dir.path().join("bias");
    run_ok(&[
        "simulate",
        "bias",
        "--n",
        "120",
        "--reps",
        "4",
        "--alphas",
        "0.25",
        "--out",
        out.to_str().unwrap(),
    ]);
    manifests.push(("simulate bias".into(), out.join("bias_manifest.json")));

    let out = dir.path().join("t2");
    run_ok(&[
        "t2",
        "sharp-bounds",
        "--model",
        model.to_str().unwrap(),
        "--delta",
        "2",
        "--lambda1",
        "1.5",
        "--lambda2",
        "1.5",
        "--restarts",
        "4",
        "--out",
        out.to_str().unwrap(),
    ]);
    manifests.push(("t2 sharp-bounds".into(), out.join("t2_bounds_manifest.json")));

    for (i, (name, manifest)) in manifests.iter().enumerate() {
        assert!(manifest.exists(), "{name} wrote no manifest");
        rerun_and_verify(manifest, &dir.path().join(format!("replay_{i}")));
    }
    println!("criterion 9: PASS (5 commands manifest-reproducible byte-for-byte)");
}

#[test]
fn unknown_flags_fail_fast_with_usage() {
    let out = bin().args(["estimate", "--bogus-flag", "1"]).output().unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("Usage") || stderr.contains("usage"), "no usage text: {stderr}");
}

#[test]
fn rerun_rejects_changed_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("data.csv");
    write_dataset(&csv, 120, 99);
    let out = dir.path().join("out");
    run_ok(&[
        "estimate",
        "--input",
        csv.to_str().unwrap(),
        "--outcome",
        "y",
        "--treatment",
        "a",
        "--covariates",
        "x",
        "--folds",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    // tamper with the input, then expect rerun to refuse
    let mut content = fs::read_to_string(&csv).unwrap();
    content.push_str("0.1,0,0.0\n");
    fs::write(&csv, content).unwrap();
    let res = bin()
        .args([
            "rerun",
            "--manifest",
            out.join("estimate_manifest.json").to_str().unwrap(),
            "--out",
            dir.path().join("replay").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("changed"));
}
