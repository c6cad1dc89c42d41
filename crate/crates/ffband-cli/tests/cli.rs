//! End-to-end tests of the `ffband` binary: file formats, the exit-code
//! contract, determinism, and the wiring of every subcommand.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ffband"));
    // Isolate from the ambient environment so thread-count tests control it.
    cmd.env_remove("FFBAND_THREADS");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    assert!(
        out.status.success(),
        "expected success, got {:?}; stderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).expect("utf-8 output")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Deterministic smooth test curves: n curves on an m-point uniform grid.
fn curve_values(n: usize, m: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let ts: Vec<f64> = (0..m).map(|j| j as f64 / (m - 1) as f64).collect();
    let curves: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let a = 0.3 * ((i as f64) * 0.7).sin();
            let b = 0.2 * ((i as f64) * 1.3).cos();
            ts.iter()
                .map(|&t| a + b * t + 0.25 * (2.0 * std::f64::consts::PI * t + i as f64).sin())
                .collect()
        })
        .collect();
    (ts, curves)
}

/// Write a curve CSV; `observed(i, j)` controls the mask.
fn write_curves(
    path: &Path,
    ts: &[f64],
    curves: &[Vec<f64>],
    observed: impl Fn(usize, usize) -> bool,
) {
    let n = curves.len();
    let mut text = String::from("t");
    for i in 0..n {
        text.push_str(&format!(",curve_{}", i + 1));
    }
    text.push('\n');
    for (j, &t) in ts.iter().enumerate() {
        text.push_str(&format!("{t:.17e}"));
        for (i, curve) in curves.iter().enumerate() {
            text.push(',');
            if observed(i, j) {
                text.push_str(&format!("{:.17e}", curve[j]));
            }
        }
        text.push('\n');
    }
    std::fs::write(path, text).expect("fixture written");
}

fn parse_band_csv(text: &str) -> Vec<Vec<f64>> {
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,lower,upper,u,width"));
    lines
        .map(|line| {
            line.split(',')
                .map(|cell| {
                    if cell == "inf" {
                        f64::INFINITY
                    } else if cell == "-inf" {
                        f64::NEG_INFINITY
                    } else {
                        cell.parse().expect("numeric cell")
                    }
                })
                .collect()
        })
        .collect()
}

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

#[test]
fn band_kr_satisfies_the_width_identity_with_a_constant_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("curves.csv");
    let (ts, curves) = curve_values(9, 21);
    write_curves(&csv, &ts, &curves, |_, _| true);

    let out = run(&["band", csv.to_str().unwrap(), "--method", "kr-t"]);
    let rows = parse_band_csv(&stdout(&out));
    assert_eq!(rows.len(), 21);
    let u0 = rows[0][3];
    assert!(u0 > 1.0);
    for row in &rows {
        let (lower, upper, u, width) = (row[1], row[2], row[3], row[4]);
        assert_eq!(u, u0, "Kac-Rice threshold is constant");
        assert!((width - (upper - lower)).abs() <= 1e-12 * width.abs().max(1.0));
        assert!(upper > lower);
    }
}

#[test]
fn band_ff_varies_the_threshold_and_writes_json_and_svg() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("curves.csv");
    let (ts, curves) = curve_values(9, 21);
    write_curves(&csv, &ts, &curves, |_, _| true);
    let json = dir.path().join("band.json");
    let svg = dir.path().join("band.svg");

    let out = run(&[
        "band",
        csv.to_str().unwrap(),
        "--method",
        "ff-t",
        "--knots",
        "4",
        "--t0",
        "0.25",
        "--json",
        json.to_str().unwrap(),
        "--svg",
        svg.to_str().unwrap(),
    ]);
    let rows = parse_band_csv(&stdout(&out));
    let us: Vec<f64> = rows.iter().map(|r| r[3]).collect();
    assert!(
        us.iter().any(|&u| (u - us[0]).abs() > 1e-9),
        "fair threshold varies over the grid"
    );
    for row in &rows {
        assert!((row[4] - (row[2] - row[1])).abs() <= 1e-12 * row[4].abs().max(1.0));
    }

    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(meta["alpha"], 0.05);
    assert_eq!(meta["method"]["threshold"], "fair");
    assert_eq!(meta["method"]["design"], "full");
    assert_eq!(meta["sided"], "two");
    assert_eq!(meta["roi_budget"].as_array().unwrap().len(), 2);

    let svg_text = std::fs::read_to_string(&svg).unwrap();
    assert!(svg_text.starts_with("<svg"));
    assert_eq!(svg_text.matches("<polyline").count(), 3);
}

#[test]
fn band_output_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("curves.csv");
    let (ts, curves) = curve_values(7, 31);
    write_curves(&csv, &ts, &curves, |_, _| true);

    let args = ["band", csv.to_str().unwrap(), "--method", "ff-z"];
    let first = stdout(&run(&args));
    let second = stdout(&run(&args));
    assert_eq!(first, second);
}

#[test]
fn one_sided_band_reports_an_unbounded_upper_limit() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("curves.csv");
    let (ts, curves) = curve_values(6, 21);
    write_curves(&csv, &ts, &curves, |_, _| true);

    let out = run(&["band", csv.to_str().unwrap(), "--method", "kr-z", "--one-sided"]);
    let rows = parse_band_csv(&stdout(&out));
    for row in &rows {
        assert_eq!(row[2], f64::INFINITY);
        assert!(row[1].is_finite());
    }
}

#[test]
fn fragment_band_uses_local_sample_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("frag.csv");
    let (ts, curves) = curve_values(8, 21);
    // Two half-overlapping window families: every point is observed by 4 to
    // 8 curves, so the fragmentary pipeline applies throughout.
    write_curves(&csv, &ts, &curves, |i, j| {
        if i < 4 {
            j <= 12
        } else {
            j >= 8
        }
    });

    let out = run(&["band", csv.to_str().unwrap(), "--method", "ff-t", "--knots", "4"]);
    let rows = parse_band_csv(&stdout(&out));
    assert_eq!(rows.len(), 21);
    for row in &rows {
        assert!(row[4].is_finite() && row[4] > 0.0);
    }
}

#[test]
fn two_sample_band_compares_group_means() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let (ts, curves) = curve_values(12, 21);
    write_curves(&a, &ts, &curves[..6], |_, _| true);
    write_curves(&b, &ts, &curves[6..], |_, _| true);

    let out = run(&[
        "band",
        a.to_str().unwrap(),
        "--two-sample",
        b.to_str().unwrap(),
        "--method",
        "kr-t",
    ]);
    let rows = parse_band_csv(&stdout(&out));
    assert_eq!(rows.len(), 21);
    for row in &rows {
        assert!((row[4] - (row[2] - row[1])).abs() <= 1e-12 * row[4].abs().max(1.0));
    }
}

#[test]
fn pvalue_at_the_exact_estimate_is_identically_one() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("curves.csv");
    let theta0 = dir.path().join("theta0.csv");
    let m = 21;
    let (ts, curves) = curve_values(6, m);
    write_curves(&csv, &ts, &curves, |_, _| true);
    // Recompute the sample mean with the estimator's own summation order so
    // theta0 matches it bit-for-bit after the full-precision CSV round trip.
    let mut text = String::from("t,value\n");
    for (j, &t) in ts.iter().enumerate() {
        let mut acc = 0.0_f64;
        for curve in &curves {
            acc += curve[j];
        }
        text.push_str(&format!("{t:.17e},{:.17e}\n", acc / curves.len() as f64));
    }
    std::fs::write(&theta0, text).unwrap();

    for method in ["ff-t", "ff-z", "kr-t", "kr-z"] {
        let out = run(&[
            "pvalue",
            csv.to_str().unwrap(),
            "--theta0",
            theta0.to_str().unwrap(),
            "--method",
            method,
        ]);
        let text = stdout(&out);
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,pvalue"));
        let mut count = 0;
        for line in lines {
            let p: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
            assert_eq!(p, 1.0, "method {method}");
            count += 1;
        }
        assert_eq!(count, m);
    }
}

#[test]
fn pvalue_flags_points_where_theta0_leaves_the_band() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("curves.csv");
    let theta0 = dir.path().join("theta0.csv");
    let (ts, curves) = curve_values(10, 21);
    write_curves(&csv, &ts, &curves, |_, _| true);
    // A far-off hypothesized curve: tiny p-values everywhere.
    let mut text = String::from("t,value\n");
    for &t in &ts {
        text.push_str(&format!("{t:.17e},{:.17e}\n", 25.0));
    }
    std::fs::write(&theta0, text).unwrap();

    let out = run(&[
        "pvalue",
        csv.to_str().unwrap(),
        "--theta0",
        theta0.to_str().unwrap(),
        "--method",
        "kr-z",
    ]);
    let text = stdout(&out);
    for line in text.lines().skip(1) {
        let p: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!(p < 1e-6);
    }
}

#[test]
fn tau_reports_a_positive_roughness_profile() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("curves.csv");
    let (ts, curves) = curve_values(9, 21);
    write_curves(&csv, &ts, &curves, |_, _| true);

    let out = run(&["tau", csv.to_str().unwrap()]);
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,tau"));
    let mut count = 0;
    for line in lines {
        let tau: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!(tau > 0.0 && tau.is_finite());
        count += 1;
    }
    assert_eq!(count, 21);
}

#[test]
fn simulate_reproduces_the_reference_size_through_the_bundled_config() {
    let config = config_path("size_kr_t_cov1_n15.json");
    let out = run(&["simulate", config.to_str().unwrap()]);
    let text = stdout(&out);
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header.len(), row.len());
    let field = |name: &str| -> &str {
        let idx = header.iter().position(|&h| h == name).expect("column");
        row[idx]
    };

    let requested: usize = field("reps_requested").parse().unwrap();
    let successes: usize = field("successes").parse().unwrap();
    let failures: usize = field("failures").parse().unwrap();
    assert_eq!(requested, 10_000);
    assert_eq!(successes + failures, requested);
    assert_eq!(failures, 0);

    let rate: f64 = field("rejection_rate").parse().unwrap();
    assert!(
        (rate - 0.052).abs() <= 0.01,
        "size {rate} vs reference 0.052"
    );
    let width: f64 = field("avg_width").parse().unwrap();
    assert!(
        (width - 0.336).abs() <= 0.01,
        "width {width} vs reference 0.336"
    );
    assert!(stderr(&out).contains("0 failed"));
}

#[test]
fn simulate_output_is_byte_identical_across_thread_counts() {
    let config = config_path("size_kr_t_cov1_n15.json");
    let dir = tempfile::tempdir().unwrap();
    let one = dir.path().join("one.csv");
    let three = dir.path().join("three.csv");

    let out1 = bin()
        .args([
            "simulate",
            config.to_str().unwrap(),
            "--reps",
            "500",
            "--out",
            one.to_str().unwrap(),
        ])
        .env("FFBAND_THREADS", "1")
        .output()
        .unwrap();
    assert!(out1.status.success(), "{}", stderr(&out1));
    let out3 = bin()
        .args([
            "simulate",
            config.to_str().unwrap(),
            "--reps",
            "500",
            "--threads",
            "2",
        ])
        .env("FFBAND_THREADS", "3")
        .arg("--out")
        .arg(three.to_str().unwrap())
        .output()
        .unwrap();
    assert!(out3.status.success(), "{}", stderr(&out3));

    let a = std::fs::read(&one).unwrap();
    let b = std::fs::read(&three).unwrap();
    assert_eq!(a, b);
}

#[test]
fn simulate_emits_nominal_levels_for_interior_anchors() {
    let config = config_path("fairness_ff_t_cov3_n100.json");
    let out = run(&["simulate", config.to_str().unwrap(), "--reps", "50"]);
    let text = stdout(&out);
    let row = text.lines().nth(1).unwrap();
    let cells: Vec<&str> = row.split(',').collect();
    let nominal_left: f64 = cells[cells.len() - 2].parse().unwrap();
    let nominal_right: f64 = cells[cells.len() - 1].parse().unwrap();
    assert!((nominal_left - 0.0201).abs() <= 1e-3);
    assert!((nominal_right - 0.0400).abs() <= 1e-3);
}

#[test]
fn malformed_cells_exit_2_naming_row_and_column() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bad.csv");
    std::fs::write(&csv, "t,curve_1,curve_2\n0.0,1.0,2.0\n0.5,oops,2.5\n1.0,3.0,2.0\n").unwrap();

    let out = run(&["band", csv.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let msg = stderr(&out);
    assert!(msg.contains("row 3"), "stderr: {msg}");
    assert!(msg.contains("curve_1"), "stderr: {msg}");
}

#[test]
fn underobserved_fragment_points_exit_2_naming_the_grid_row() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("frag.csv");
    let (ts, curves) = curve_values(4, 11);
    // The last two grid points are observed by a single curve; the first
    // short one is grid index 9, i.e. file row 11 behind the header.
    write_curves(&csv, &ts, &curves, |i, j| if i == 0 { true } else { j <= 8 });

    let out = run(&["band", csv.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let msg = stderr(&out);
    assert!(msg.contains("grid row 11"), "stderr: {msg}");
    assert!(msg.contains("at least two observations"), "stderr: {msg}");
}

#[test]
fn off_knot_anchors_and_bad_configs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("curves.csv");
    let (ts, curves) = curve_values(5, 11);
    write_curves(&csv, &ts, &curves, |_, _| true);

    let out = run(&["band", csv.to_str().unwrap(), "--method", "ff-t", "--t0", "0.3"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("--t0"));

    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, "{\"mean\":\"mean7\"}").unwrap();
    let out = run(&["simulate", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    let out = run(&["band", dir.path().join("missing.csv").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn grid_outside_the_unit_interval_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("curves.csv");
    std::fs::write(&csv, "t,curve_1,curve_2\n0.0,1.0,2.0\n0.5,1.5,2.5\n2.0,3.0,2.0\n").unwrap();
    let out = run(&["band", csv.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}
