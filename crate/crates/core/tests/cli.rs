mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::fixture;

const SHORT: [&str; 4] = ["--sweeps", "300", "--burn-in", "150"];

fn hidalgo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hidalgo"))
        .args(args)
        .env("HIDALGO_JOBS", "2")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = hidalgo(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn err(args: &[&str]) -> String {
    let out = hidalgo(args);
    assert!(!out.status.success(), "{args:?} should fail");
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

fn two_manifold_spec(dir: &Path) -> PathBuf {
    let spec = dir.join("spec.json");
    fs::write(
        &spec,
        r#"[{"kind": "circle", "n": 300, "d_true": 1, "D": 8, "seed": 1, "rotate": true},
            {"kind": "gaussian", "n": 300, "d_true": 5, "D": 8, "seed": 2, "rotate": true,
             "offset": [10, 10, 10, 10, 10, 10, 10, 10]}]"#,
    )
    .unwrap();
    spec
}

fn simulate(dir: &Path) -> PathBuf {
    let spec = two_manifold_spec(dir);
    let out = dir.join("sim");
    ok(&["simulate", &s(&spec), "--out", &s(&out)]);
    out.join("dataset.csv")
}

/// Data rows of a CSV, skipping `#` comment lines and the header.
fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path).unwrap();
    r.records()
        .map(|rec| rec.unwrap().iter().map(str::to_string).collect())
        .collect()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn simulate_writes_dataset_labels_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let dataset = simulate(tmp.path());
    let sim = dataset.parent().unwrap();
    assert_eq!(csv_rows(&dataset).len(), 600);
    let labels = csv_rows(&sim.join("labels.csv"));
    assert_eq!(labels.iter().filter(|r| r[1] == "1").count(), 300);
    ok(&["verify", &s(&sim.join("manifest.json"))]);

    let again = tmp.path().join("again");
    ok(&["simulate", &s(&tmp.path().join("spec.json")), "--out", &s(&again)]);
    assert_eq!(fs::read(&dataset).unwrap(), fs::read(again.join("dataset.csv")).unwrap());
}

#[test]
fn simulate_rejects_intrinsic_dimension_above_ambient() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tmp.path().join("bad.json");
    fs::write(&spec, r#"{"kind": "hypercube", "n": 50, "d_true": 6, "D": 4, "seed": 1}"#).unwrap();
    let msg = err(&["simulate", &s(&spec), "--out", &s(&tmp.path().join("o"))]);
    assert!(msg.contains("d_true"), "{msg}");
}

#[test]
fn truncated_estimates_stay_below_the_ambient_dimension() {
    let tmp = tempfile::tempdir().unwrap();
    let dataset = simulate(tmp.path());
    let out = tmp.path().join("est");
    let mut args = vec!["estimate", dataset.to_str().unwrap(), "--prior", "truncated", "--K", "3"];
    args.extend(SHORT);
    let out_s = s(&out);
    args.extend(["--out", out_s.as_str()]);
    ok(&args);

    let trace = csv_rows(&out.join("trace_chain0.csv"));
    assert_eq!(trace.len(), 150);
    for row in &trace {
        // sweep, log_posterior, d_1..d_3, ...
        for d in &row[2..5] {
            assert!(d.parse::<f64>().unwrap() <= 8.0);
        }
    }
    for row in csv_rows(&out.join("id_estimates.csv")) {
        assert!(row[4].parse::<f64>().unwrap() <= 8.0);
    }
    assert_eq!(csv_rows(&out.join("partition.csv")).len(), 600);
    assert_eq!(csv_rows(&out.join("psm.csv")).len(), 600);
    ok(&["verify", &s(&out.join("manifest.json"))]);
}

#[test]
fn chains_are_distinct_and_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let dataset = simulate(tmp.path());
    let run = |name: &str| -> Vec<Vec<u8>> {
        let out = tmp.path().join(name);
        let mut args = vec!["estimate", dataset.to_str().unwrap(), "--chains", "4", "--seed", "7"];
        args.extend(SHORT);
        let out_s = s(&out);
        args.extend(["--out", out_s.as_str()]);
        ok(&args);
        (0..4).map(|c| fs::read(out.join(format!("trace_chain{c}.csv"))).unwrap()).collect()
    };
    let a = run("a");
    let b = run("b");
    assert_eq!(a, b);
    for i in 0..4 {
        for j in i + 1..4 {
            assert_ne!(a[i], a[j], "chains {i} and {j} coincide");
        }
    }
}

#[test]
fn k_scan_reports_the_best_mean_log_posterior() {
    let tmp = tempfile::tempdir().unwrap();
    let dataset = simulate(tmp.path());
    let out = tmp.path().join("scan");
    let mut args = vec!["estimate", dataset.to_str().unwrap(), "--K-scan", "1..3"];
    args.extend(SHORT);
    let out_s = s(&out);
    args.extend(["--out", out_s.as_str()]);
    ok(&args);

    let scan = json(&out.join("k_scan.json"));
    let table = scan["table"].as_array().unwrap();
    let means: Vec<f64> = table.iter().map(|r| r["mean_log_posterior"].as_f64().unwrap()).collect();
    assert_eq!(means.len(), 3);
    let best = means.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0 + 1;
    assert_eq!(scan["K"].as_u64().unwrap() as usize, best);
    // Two manifolds of different dimension: K = 2 must beat a single component.
    assert!(means[1] > means[0]);
}

#[test]
fn flag_domain_errors_name_the_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let dataset = simulate(tmp.path());
    let d = s(&dataset);
    let o = s(&tmp.path().join("o"));
    for (flag, extra) in [
        ("--zeta", vec!["--zeta", "0.3"]),
        ("--sweeps", vec!["--sweeps", "10", "--burn-in", "20"]),
        ("--K", vec!["--K", "0"]),
        ("--thin", vec!["--thin", "0"]),
    ] {
        let mut args = vec!["estimate", d.as_str(), "--out", o.as_str()];
        args.extend(extra);
        let msg = err(&args);
        assert!(msg.contains(flag), "{flag}: {msg}");
    }
}

#[test]
fn movement_fixture_play_gives_a_24_row_curve() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("mv");
    let (t, p) = (s(&fixture("game/tracking.csv")), s(&fixture("game/pbp.csv")));
    let mut args = vec!["analyze-movement", t.as_str(), p.as_str(), "--game", "g001", "--play", "1"];
    args.extend(SHORT);
    let out_s = s(&out);
    args.extend(["--out", out_s.as_str()]);
    ok(&args);

    let curve = csv_rows(&out.join("play_1_id_curve.csv"));
    assert_eq!(curve.len(), 24);
    for row in &curve {
        let v: Vec<f64> = row[3..].iter().map(|x| x.parse().unwrap()).collect();
        // mean, median, lower, upper
        assert!(v[2] <= v[1] && v[1] <= v[3]);
    }
    assert_eq!(csv_rows(&out.join("play_1_psm.csv")).len(), 24);
    let summary = json(&out.join("movement_summary.json"));
    assert_eq!(summary["plays"][0]["rows"], 24);
    assert!(summary["warnings"][0].as_str().unwrap().contains("autocorrelated"));
}

#[test]
fn speed_features_drop_one_row_and_unmatched_events_are_listed() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("mv");
    let (t, p) = (s(&fixture("game/tracking.csv")), s(&fixture("game/pbp.csv")));
    let mut args = vec!["analyze-movement", t.as_str(), p.as_str(), "--features", "speed"];
    args.extend(SHORT);
    let out_s = s(&out);
    args.extend(["--out", out_s.as_str()]);
    ok(&args);

    assert_eq!(csv_rows(&out.join("play_1_id_curve.csv")).len(), 23);
    assert_eq!(csv_rows(&out.join("play_2_id_curve.csv")).len(), 9);
    let summary = json(&out.join("movement_summary.json"));
    let unmatched: Vec<&str> = summary["unmatched_events"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    assert!(unmatched.iter().any(|e| e.contains('3')), "{unmatched:?}");
}

#[test]
fn movement_without_pbp_file_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let t = s(&fixture("game/tracking.csv"));
    let missing = s(&tmp.path().join("nope.csv"));
    err(&["analyze-movement", &t, &missing, "--out", &s(&tmp.path().join("o"))]);
}

#[test]
fn shot_chart_success_matches_hand_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sc");
    let (t, p) = (s(&fixture("shots/tracking.csv")), s(&fixture("shots/pbp.csv")));
    let mut args = vec!["analyze-shotcharts", t.as_str(), p.as_str()];
    args.extend(SHORT);
    let out_s = s(&out);
    args.extend(["--out", out_s.as_str()]);
    ok(&args);

    let sidecar = json(&out.join("shotcharts.json"));
    assert_eq!(sidecar["D"], 20);
    let events: Vec<String> = sidecar["event_ids"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    assert_eq!(events.len(), 40);

    // Outcomes straight from the play-by-play file.
    let made: BTreeMap<String, bool> = csv_rows(&fixture("shots/pbp.csv"))
        .into_iter()
        .map(|r| (r[0].clone(), r[1] == "made"))
        .collect();
    let mut counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for row in csv_rows(&out.join("partition.csv")) {
        let event = row[0].trim_start_matches("event");
        let e = counts.entry(row[1].clone()).or_default();
        e.0 += 1;
        e.1 += made[event] as usize;
    }
    let success = csv_rows(&out.join("success.csv"));
    assert_eq!(success.len(), counts.len());
    for row in success {
        let (n, m) = counts[&row[0]];
        assert_eq!(row[1].parse::<usize>().unwrap(), n);
        assert_eq!(row[2].parse::<usize>().unwrap(), m);
        assert_eq!(row[3].parse::<f64>().unwrap(), m as f64 / n as f64);
    }

    let categories = csv_rows(&out.join("categories.csv"));
    let bands: Vec<&Vec<String>> = categories.iter().filter(|r| r[0] == "margin_band").collect();
    assert_eq!(bands.len(), 4);
    let tests = json(&out.join("tests.json"));
    assert!(tests["tests"].as_array().unwrap().iter().all(|t| {
        let p = t["p"].as_f64().unwrap();
        (0.0..=1.0).contains(&p)
    }));
}

#[test]
fn single_team_modes_have_ten_columns() {
    let tmp = tempfile::tempdir().unwrap();
    let (t, p) = (s(&fixture("shots/tracking.csv")), s(&fixture("shots/pbp.csv")));
    for mode in ["single-attack", "single-defense"] {
        let out = tmp.path().join(mode);
        let mut args = vec!["analyze-shotcharts", t.as_str(), p.as_str(), "--mode", mode];
        // The defense in every fixture play is AWY.
        args.extend(["--team", if mode == "single-attack" { "HOM" } else { "AWY" }]);
        args.extend(SHORT);
        let out_s = s(&out);
        args.extend(["--out", out_s.as_str()]);
        ok(&args);
        assert_eq!(json(&out.join("shotcharts.json"))["D"], 10);
    }
}

#[test]
fn mode_and_team_mismatches_fail() {
    let tmp = tempfile::tempdir().unwrap();
    let (t, p) = (s(&fixture("shots/tracking.csv")), s(&fixture("shots/pbp.csv")));
    let o = s(&tmp.path().join("o"));
    let msg = err(&["analyze-shotcharts", &t, &p, "--mode", "single-attack", "--out", &o]);
    assert!(msg.contains("--team") || msg.contains("team"), "{msg}");
    let msg = err(&["analyze-shotcharts", &t, &p, "--mode", "single-attack", "--team", "XYZ", "--out", &o]);
    assert!(msg.contains("XYZ"), "{msg}");
}

#[test]
fn verify_detects_tampering_and_outputs_stay_in_out_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let dataset = simulate(tmp.path());
    let out = tmp.path().join("est");
    let mut args = vec!["estimate", dataset.to_str().unwrap()];
    args.extend(SHORT);
    let out_s = s(&out);
    args.extend(["--out", out_s.as_str()]);
    ok(&args);

    let mut top: Vec<String> = fs::read_dir(tmp.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    top.sort();
    assert_eq!(top, ["est", "sim", "spec.json"]);

    let manifest = json(&out.join("manifest.json"));
    let listed: Vec<&str> = manifest["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|o| o["path"].as_str().unwrap())
        .collect();
    let on_disk = fs::read_dir(&out).unwrap().count();
    assert_eq!(listed.len() + 1, on_disk);

    ok(&["verify", &s(&out.join("manifest.json"))]);
    let target = out.join("partition.csv");
    let mut bytes = fs::read(&target).unwrap();
    bytes.push(b'\n');
    fs::write(&target, bytes).unwrap();
    let msg = err(&["verify", &s(&out.join("manifest.json"))]);
    assert!(msg.contains("partition.csv"), "{msg}");
}
