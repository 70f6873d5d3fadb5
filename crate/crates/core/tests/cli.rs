//! End-to-end runs of the `rigcal` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rigcal::metrics::CSV_HEADER;

fn rigcal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rigcal"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = rigcal(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails_with(args: &[&str], code: i32) -> String {
    let out = rigcal(args);
    assert_eq!(
        out.status.code(),
        Some(code),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stderr).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().into_string().unwrap(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

/// Value of `key=` on the stdout line starting with `label:`.
fn loss(stdout: &str, label: &str, key: &str) -> f64 {
    let line = stdout.lines().find(|l| l.starts_with(label)).unwrap();
    let field = line
        .split_whitespace()
        .find_map(|f| f.strip_prefix(&format!("{key}=")))
        .unwrap();
    field.parse().unwrap()
}

fn noiseless_config(dir: &Path) -> String {
    let path = dir.join("noiseless.json");
    fs::write(&path, r#"{"sim": {"noise": {"rot_perturb_deg": 2.0, "trans_perturb_m": 0.05, "depth_sigma_rel": 0.0, "dropout_rate": 0.0, "seed": 0}}}"#)
        .unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn simulate_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let stdout = ok(&["simulate", "--out", s(&a), "--seed", "7"]);
    assert!(stdout.contains("cameras: 4"), "{stdout}");
    assert!(stdout.contains("320x240"), "{stdout}");
    ok(&["simulate", "--out", s(&b), "--seed", "7"]);
    let files = dir_bytes(&a);
    assert_eq!(files.len(), 5);
    assert_eq!(files, dir_bytes(&b));
    let c = tmp.path().join("c");
    ok(&["simulate", "--out", s(&c), "--seed", "8"]);
    assert_ne!(files, dir_bytes(&c));
}

#[test]
fn refine_writes_a_reproducible_estimate() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    ok(&["simulate", "--out", s(&data), "--seed", "7"]);
    let (e1, e2) = (tmp.path().join("e1.json"), tmp.path().join("e2.json"));
    let args = |e: &Path| {
        vec![
            "refine".to_string(),
            "--dataset".into(),
            s(&data).into(),
            "--out".into(),
            s(e).into(),
            "--max-outer".into(),
            "3".into(),
        ]
    };
    let out1 = ok(&args(&e1).iter().map(String::as_str).collect::<Vec<_>>());
    let out2 = ok(&args(&e2).iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(out1.replace(s(&e1), ""), out2.replace(s(&e2), ""));
    assert_eq!(fs::read(&e1).unwrap(), fs::read(&e2).unwrap());
    assert!(
        loss(&out1, "final", "L") < loss(&out1, "initial", "L"),
        "{out1}"
    );
    assert!(out1.contains("termination:"), "{out1}");

    let r1 = tmp.path().join("r1.csv");
    let r2 = tmp.path().join("r2.csv");
    ok(&[
        "evaluate",
        "--dataset",
        s(&data),
        "--estimate",
        s(&e1),
        "--report",
        s(&r1),
    ]);
    ok(&[
        "evaluate",
        "--dataset",
        s(&data),
        "--estimate",
        s(&e1),
        "--report",
        s(&r2),
    ]);
    assert_eq!(fs::read(&r1).unwrap(), fs::read(&r2).unwrap());
    assert!(fs::read_to_string(&r1).unwrap().starts_with(CSV_HEADER));
}

#[test]
fn zero_lambda_reports_geo_loss_only() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    ok(&["simulate", "--out", s(&data), "--seed", "1"]);
    let est = tmp.path().join("e.json");
    let stdout = ok(&[
        "refine",
        "--dataset",
        s(&data),
        "--out",
        s(&est),
        "--lambda",
        "0",
        "--max-outer",
        "2",
    ]);
    for label in ["initial", "final"] {
        assert_eq!(
            loss(&stdout, label, "L"),
            loss(&stdout, label, "L_geo"),
            "{stdout}"
        );
    }
    assert!(loss(&stdout, "initial", "L_cycle") > 0.0, "{stdout}");
}

#[test]
fn constraint_flags_are_validated() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    ok(&["simulate", "--out", s(&data)]);
    let est = tmp.path().join("e.json");
    let err = fails_with(
        &[
            "refine",
            "--dataset",
            s(&data),
            "--out",
            s(&est),
            "--no-rc",
            "--no-mc",
        ],
        2,
    );
    assert!(err.contains("at least one constraint required"), "{err}");
    assert!(!est.exists());

    let pair = tmp.path().join("pair");
    ok(&["simulate", "--out", s(&pair), "--cameras", "2"]);
    let err = fails_with(
        &["refine", "--dataset", s(&pair), "--out", s(&est), "--no-rc"],
        2,
    );
    assert!(err.contains("3 cameras"), "{err}");
}

#[test]
fn evaluating_ground_truth_gives_zero_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    ok(&["simulate", "--out", s(&data), "--seed", "4"]);
    let rig = rigcal::dataset::load_rig(&data).unwrap();
    let est = rigcal::dataset::EstimateFile {
        extrinsics: rig.ground_truth().unwrap(),
        l_geo: 0.0,
        l_cycle: 0.0,
        iterations: 0,
        termination: "converged".into(),
        config: serde_json::json!({}),
    };
    let path = tmp.path().join("gt.json");
    rigcal::dataset::save_estimate(&est, &path).unwrap();
    let csv = ok(&["evaluate", "--dataset", s(&data), "--estimate", s(&path)]);
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("variant,seed,camera_id,rot_error_deg,trans_error_mm")
    );
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 3 + 2);
    for row in &rows {
        assert_eq!(row.len(), 5);
        let (rot, trans): (f64, f64) = (row[3].parse().unwrap(), row[4].parse().unwrap());
        assert!(rot < 1e-9 && trans < 1e-9, "{row:?}");
    }

    // the initial extrinsics carry the injected perturbation
    let csv = ok(&["evaluate", "--dataset", s(&data)]);
    let mean_rot: f64 = csv
        .lines()
        .find(|l| l.contains(",mean,"))
        .unwrap()
        .split(',')
        .nth(3)
        .unwrap()
        .parse()
        .unwrap();
    assert!(mean_rot > 0.5 && mean_rot < 15.0, "{csv}");
}

#[test]
fn evaluation_needs_ground_truth() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    ok(&["simulate", "--out", s(&data)]);
    let path = data.join("rig.json");
    let mut v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    for cam in v["cameras"].as_array_mut().unwrap() {
        cam.as_object_mut().unwrap().remove("gt_extrinsic");
    }
    fs::write(&path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    let err = fails_with(&["evaluate", "--dataset", s(&data)], 2);
    assert!(err.contains("ground truth"), "{err}");
    let err = fails_with(&["ablate", "--dataset", s(&data)], 2);
    assert!(err.contains("ground truth"), "{err}");
}

#[test]
fn noiseless_ablation_recovers_the_rig() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = noiseless_config(tmp.path());
    let data = tmp.path().join("d");
    ok(&["simulate", "--out", s(&data), "--config", &cfg]);
    let csv = ok(&[
        "ablate",
        "--dataset",
        s(&data),
        "--config",
        &cfg,
        "--trials",
        "1",
    ]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], CSV_HEADER);
    for line in &lines[1..] {
        assert_eq!(line.split(',').count(), 5, "{line}");
    }
    let summary = |variant: &str| -> (f64, f64) {
        let row: Vec<&str> = lines
            .iter()
            .find(|l| l.starts_with(&format!("{variant},all,mean,")))
            .unwrap()
            .split(',')
            .collect();
        (row[3].parse().unwrap(), row[4].parse().unwrap())
    };
    let (rot, trans) = summary("full");
    assert!(rot < 0.05 && trans < 1.0, "{csv}");
    assert!(summary("original").0 > rot);
    let max_full = lines
        .iter()
        .filter(|l| l.starts_with("full,0,") && !l.contains(",mean,") && !l.contains(",max,"))
        .map(|l| l.split(',').nth(3).unwrap().parse::<f64>().unwrap())
        .fold(0.0, f64::max);
    assert!(max_full < 0.05, "{csv}");
}

#[test]
fn usage_errors_exit_two() {
    fails_with(&["calibrate"], 2);
    fails_with(&[], 2);
    fails_with(&["refine", "--out", "x.json"], 2);
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope");
    let err = fails_with(
        &[
            "refine",
            "--dataset",
            s(&missing),
            "--out",
            s(&tmp.path().join("e.json")),
        ],
        2,
    );
    assert!(err.contains("rig.json"), "{err}");
    let err = fails_with(&["ablate", "--dataset", s(&missing), "--trials", "0"], 2);
    assert!(err.contains("--trials"), "{err}");
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{"objective": {"lamda": 1.0}}"#).unwrap();
    let err = fails_with(
        &[
            "simulate",
            "--out",
            s(&tmp.path().join("d")),
            "--config",
            s(&bad),
        ],
        2,
    );
    assert!(err.contains("lamda"), "{err}");
    assert!(ok(&["--help"]).contains("simulate"));
}
