//! End-to-end tests of the binary: golden values, determinism, output
//! round-trips and the exit-code contract.

use std::process::{Command, Output};

fn drlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drlab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_str(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("utf8 stdout")
}

/// Canonical reformatting of one CSV field: integers stay as-is, floats are
/// re-rendered at 17 significant digits. A CSV round-trips iff this map is
/// the identity on every field.
fn canon_field(field: &str) -> String {
    if field.chars().all(|c| c.is_ascii_digit()) || matches!(field, "S" | "U" | "C?") {
        return field.to_string();
    }
    let x: f64 = field.parse().expect("numeric field");
    format!("{:.16e}", x)
}

#[test]
fn iterate_golden_first_step() {
    let out = drlab(&[
        "iterate", "--m", "2", "--r0", "0.5", "--p0", "0.5", "--steps", "1",
    ]);
    assert!(out.status.success());
    let text = stdout_str(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3, "header + 2 rows");
    let row1: Vec<&str> = lines[2].split(',').collect();
    assert_eq!(row1[0], "1");
    assert_eq!(row1[1], format!("{:.16e}", 1.0f64 / 3.0));
    assert_eq!(row1[2], format!("{:.16e}", 5.0f64 / 9.0));
}

#[test]
fn iterate_zero_steps_single_row() {
    let out = drlab(&[
        "iterate", "--m", "2", "--r0", "0.3", "--p0", "0.7", "--steps", "0",
    ]);
    assert!(out.status.success());
    let text = stdout_str(&out);
    assert_eq!(text.lines().count(), 2, "header + exactly one data row");
}

#[test]
fn iterate_residual_columns_stay_small() {
    let out = drlab(&[
        "iterate", "--m", "2", "--r0", "0.5", "--p0", "0.5", "--steps", "50",
    ]);
    assert!(out.status.success());
    let text = stdout_str(&out);
    for line in text.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        for idx in [8usize, 9, 10] {
            let v: f64 = fields[idx].parse().unwrap();
            if v.is_nan() {
                continue; // trailing rows lack successors
            }
            assert!(
                v.abs() <= 1e-12,
                "residual column {idx} = {v:e} on row {}",
                fields[0]
            );
        }
    }
}

#[test]
fn csv_round_trips_byte_identically() {
    for args in [
        vec![
            "iterate", "--m", "2.5", "--r0", "0.62", "--p0", "0.37", "--steps", "25",
        ],
        vec![
            "phase-scan",
            "--m",
            "2",
            "--r0-cells",
            "6",
            "--p0-cells",
            "6",
            "--budget",
            "3000",
        ],
        vec![
            "exp-variant",
            "--m",
            "2",
            "--lambda0",
            "1.0",
            "--p0",
            "0.5",
            "--steps",
            "10",
        ],
    ] {
        let out = drlab(&args);
        assert!(out.status.success(), "{args:?}");
        let text = stdout_str(&out);
        let mut rebuilt = String::new();
        for (i, line) in text.lines().enumerate() {
            if i == 0 {
                rebuilt.push_str(line);
            } else {
                let canon: Vec<String> = line.split(',').map(canon_field).collect();
                rebuilt.push_str(&canon.join(","));
            }
            rebuilt.push('\n');
        }
        assert_eq!(text, rebuilt, "round-trip changed bytes for {args:?}");
    }
}

#[test]
fn classify_supercritical_region_d() {
    let out = drlab(&["classify", "--m", "2", "--r0", "0.4", "--p0", "0.9"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout_str(&out)).unwrap();
    assert_eq!(v["report"]["regime"], "Supercritical");
    assert!(v["report"]["free_energy"]["value"].as_f64().unwrap() > 0.0);
    assert!(v["report"]["K"].is_null());
    assert_eq!(v["report"]["r_star"]["value"].as_f64().unwrap(), 0.0);
}

#[test]
fn classify_subcritical_with_constants() {
    let out = drlab(&["classify", "--m", "2", "--r0", "0.9", "--p0", "0.9"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout_str(&out)).unwrap();
    assert_eq!(v["report"]["regime"], "Subcritical");
    let r_star = v["report"]["r_star"]["value"].as_f64().unwrap();
    assert!((r_star - 0.773_554_618_078_304_5).abs() < 1e-10);
    assert!(v["report"]["K"]["value"].as_f64().unwrap() > 0.0);
    assert_eq!(v["report"]["free_energy"]["value"].as_f64().unwrap(), 0.0);
    assert!(v["report"]["Q"].is_null());
}

#[test]
fn outputs_are_byte_deterministic() {
    for args in [
        vec!["classify", "--m", "2", "--r0", "0.9", "--p0", "0.9"],
        vec![
            "mc",
            "--m",
            "2",
            "--r0",
            "0.5",
            "--p0",
            "0.5",
            "--depth",
            "4",
            "--samples",
            "20000",
            "--seed",
            "7",
        ],
        vec![
            "phase-scan",
            "--m",
            "2",
            "--r0-cells",
            "8",
            "--p0-cells",
            "8",
            "--budget",
            "3000",
        ],
    ] {
        let a = drlab(&args);
        let b = drlab(&args);
        assert!(a.status.success());
        assert_eq!(a.stdout, b.stdout, "non-deterministic output for {args:?}");
    }
}

#[test]
fn mc_seed_changes_output() {
    let base = vec![
        "mc",
        "--m",
        "2",
        "--r0",
        "0.5",
        "--p0",
        "0.5",
        "--depth",
        "4",
        "--samples",
        "20000",
    ];
    let mut a_args = base.clone();
    a_args.extend(["--seed", "7"]);
    let mut b_args = base;
    b_args.extend(["--seed", "8"]);
    let a = drlab(&a_args);
    let b = drlab(&b_args);
    assert!(a.status.success() && b.status.success());
    assert_ne!(a.stdout, b.stdout);
}

#[test]
fn exit_code_contract() {
    // 2: usage (unknown flag via clap)
    let out = drlab(&["iterate", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    // 2: invalid model parameter
    let out = drlab(&["classify", "--m", "0.5", "--r0", "0.5", "--p0", "0.5"]);
    assert_eq!(out.status.code(), Some(2));
    // 2: unparsable decimal
    let out = drlab(&["classify", "--m", "2", "--r0", "zebra", "--p0", "0.5"]);
    assert_eq!(out.status.code(), Some(2));
    // 3: resource budget (expected tree nodes above the cap)
    let out = drlab(&[
        "mc",
        "--m",
        "2",
        "--r0",
        "0.5",
        "--p0",
        "0.5",
        "--depth",
        "40",
        "--samples",
        "1000000",
        "--seed",
        "1",
        "--node-budget",
        "1000",
    ]);
    assert_eq!(out.status.code(), Some(3));
    // 3: bisection budget wall
    let out = drlab(&[
        "critical-locate",
        "--m",
        "2",
        "--r0",
        "0.8",
        "--tol",
        "1e-13",
        "--max-probe-budget",
        "20000",
    ]);
    assert_eq!(out.status.code(), Some(3));
    // 4: tolerance below the representable resolution at standard precision
    let out = drlab(&[
        "critical-locate",
        "--m",
        "2",
        "--r0",
        "0.8",
        "--tol",
        "1e-30",
    ]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn locate_reports_bracket_and_agrees_with_reference() {
    let out = drlab(&[
        "critical-locate",
        "--m",
        "2",
        "--r0",
        "0.8",
        "--tol",
        "1e-8",
        "--max-probe-budget",
        "400000",
    ]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout_str(&out)).unwrap();
    let rep = &v["report"];
    assert_eq!(rep["tol_achieved"], true);
    assert!(rep["bracket_width"].as_f64().unwrap() <= 1e-8);
    // offline 60-digit reference: p_c(r0 = 0.8) ~ 0.8669750979
    let p_c = rep["p0_critical"].as_f64().unwrap();
    assert!((p_c - 0.8669750979).abs() < 1e-7, "p_c = {p_c}");
    assert_eq!(rep["monotonicity_violations"].as_u64().unwrap(), 0);
}

#[test]
fn phase_scan_region_d_and_codes() {
    let out = drlab(&[
        "phase-scan",
        "--m",
        "2",
        "--r0-min",
        "0.0",
        "--r0-max",
        "0.5",
        "--r0-cells",
        "5",
        "--p0-cells",
        "5",
        "--budget",
        "3000",
    ]);
    assert!(out.status.success());
    let text = stdout_str(&out);
    let mut rows = 0;
    for line in text.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(
            fields[2], "S",
            "cell {},{} not supercritical",
            fields[0], fields[1]
        );
        rows += 1;
    }
    assert_eq!(rows, 25);
}

#[test]
fn expand_critical_run_has_nv_column() {
    // a near-critical point located offline at standard precision
    let out = drlab(&[
        "expand",
        "--m",
        "2",
        "--r0",
        "0.8",
        "--p0",
        "0.86697509794921875",
        "--n-max",
        "400",
        "--regime",
        "critical",
    ]);
    assert!(out.status.success());
    let text = stdout_str(&out);
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    let nv_idx = header.iter().position(|&h| h == "n_v_n").unwrap();
    let est_idx = header.iter().position(|&h| h == "estimator").unwrap();
    let last = text.lines().last().unwrap();
    let fields: Vec<&str> = last.split(',').collect();
    let nv: f64 = fields[nv_idx].parse().unwrap();
    // n v_n -> 2/m = 1 at m = 2; at n = 400 the log-correction leaves ~3%
    assert!((nv - 1.0).abs() < 0.05, "n v_n = {nv}");
    let est: f64 = fields[est_idx].parse().unwrap();
    assert!((est - 1.0).abs() < 0.05, "estimator = {est}");
}

#[test]
fn propagate_pmf_tracks_closed_form() {
    let out = drlab(&[
        "propagate-pmf",
        "--m",
        "2",
        "--r0",
        "0.5",
        "--p0",
        "0.5",
        "--steps",
        "3",
    ]);
    assert!(out.status.success());
    let text = stdout_str(&out);
    for line in text.lines().skip(2) {
        let fields: Vec<&str> = line.split(',').collect();
        let tv: f64 = fields[1].parse().unwrap();
        assert!(tv <= 1e-9, "step {} tv {tv:e}", fields[0]);
    }
}

#[test]
fn out_flag_writes_payload_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.csv");
    let out = drlab(&[
        "iterate",
        "--m",
        "2",
        "--r0",
        "0.5",
        "--p0",
        "0.5",
        "--steps",
        "2",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let payload = std::fs::read_to_string(&path).unwrap();
    assert!(payload.starts_with("n,r,p,"));
    let manifest_path = dir.path().join("run.csv.manifest.json");
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(manifest_path).unwrap()).unwrap();
    assert_eq!(manifest["command"], "iterate");
    // checksum covers the payload bytes
    use sha2::Digest;
    let digest = hex::encode(sha2::Sha256::digest(payload.as_bytes()));
    assert_eq!(manifest["output_sha256"], digest.as_str());
}

#[test]
fn extended_precision_iterate_prints_full_digits() {
    let out = drlab(&[
        "iterate",
        "--m",
        "2",
        "--r0",
        "0.5",
        "--p0",
        "0.5",
        "--steps",
        "1",
        "--precision",
        "extended:40",
    ]);
    assert!(out.status.success());
    let text = stdout_str(&out);
    let row1: Vec<&str> = text.lines().nth(2).unwrap().split(',').collect();
    // r_1 = 1/3 at 40 digits
    assert_eq!(row1[1], "3.333333333333333333333333333333333333333e-1");
    // p_1 = 5/9
    assert!(row1[2].starts_with("5.5555555555555555555555555555555555"));
}
