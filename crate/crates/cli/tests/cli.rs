//! End-to-end tests of the odesens binary: artifact schemas, exit codes,
//! determinism, and the invariants the tool promises on the benchmarks.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_odesens"))
}

/// Fresh scratch directory under the cargo test tmpdir.
fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn odesens")
}

fn run_ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "odesens {args:?} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn manifest(dir: &Path) -> serde_json::Value {
    let text = fs::read_to_string(dir.join("manifest.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn result_f64(m: &serde_json::Value, key: &str) -> f64 {
    m["results"][key].as_f64().unwrap_or_else(|| panic!("missing result {key}"))
}

/// Parses a CSV artifact and checks the RFC 4180 framing on the way.
fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let text = fs::read_to_string(path).unwrap();
    assert!(
        text.contains("\r\n"),
        "expected CRLF line endings in {}",
        path.display()
    );
    text.lines()
        .filter(|l| !l.is_empty())
        .map(|l| l.trim_end().split(',').map(str::to_string).collect())
        .collect()
}

fn cell(rows: &[Vec<String>], row: usize, col: usize) -> f64 {
    rows[row][col].parse().unwrap_or_else(|_| panic!("cell ({row}, {col}) = {:?}", rows[row][col]))
}

#[test]
fn run_artifacts_deterministic_and_schema() {
    let a = scratch("det-a");
    let b = scratch("det-b");
    let base = [
        "run", "--problem", "zermelo", "--epsilon", "0.1", "--grid-n", "200", "--seed", "7",
    ];
    run_ok(&[&base[..], &["--out", a.to_str().unwrap()]].concat());
    run_ok(&[&base[..], &["--out", b.to_str().unwrap()]].concat());

    for file in ["trajectories.csv", "bounds.csv", "qoi.csv"] {
        let left = fs::read(a.join(file)).unwrap();
        let right = fs::read(b.join(file)).unwrap();
        assert_eq!(left, right, "{file} differs between identical runs");
    }

    let traj = csv_rows(&a.join("trajectories.csv"));
    assert_eq!(
        traj[0],
        vec!["t", "eps_x1", "eps_x2", "star_x1", "star_x2", "err_norm"]
    );
    assert_eq!(traj.len(), 202, "header plus 201 nodes");
    // 17 significant digits throughout.
    assert_eq!(traj[1][0], "0.0000000000000000e0");

    let bounds = csv_rows(&a.join("bounds.csv"));
    assert_eq!(
        bounds[0],
        vec!["t", "delta_x_norm", "gronwall_e", "log_lipschitz"]
    );
    let qoi = csv_rows(&a.join("qoi.csv"));
    assert_eq!(qoi[0], vec!["q_eps", "q_star", "adjoint_estimate", "qoi_bound"]);
    assert_eq!(qoi.len(), 2);

    // The manifest echoes every resolved setting.
    let m = manifest(&a);
    assert_eq!(m["command"], "run");
    assert_eq!(m["config"]["problem"], "zermelo");
    assert_eq!(m["config"]["epsilon"].as_f64().unwrap(), 0.1);
    assert_eq!(m["config"]["grid"]["adaptive"], false);
    assert_eq!(m["config"]["grid"]["n"], 200);
    assert_eq!(m["config"]["seed"], 7);
    assert_eq!(m["config"]["restarts"], 8);
    assert_eq!(m["config"]["cap"].as_f64().unwrap(), 1e10);
    assert_eq!(m["config"]["lipschitz"].as_f64().unwrap(), 4.0);
    assert_eq!(m["config"]["q_weight"], "identity");
    assert!(m["config"]["workers"].as_u64().unwrap() >= 1);
    assert!(m["versions"]["odesens_core"].is_string());
    assert!(m["versions"]["odesens_cli"].is_string());
    assert!(m["created_unix_ms"].as_u64().unwrap() > 0);
    assert!(result_f64(&m, "state_bound") >= result_f64(&m, "sensitivity_estimate"));
}

#[test]
fn epsilon_zero_reports_no_error() {
    let dir = scratch("eps0");
    run_ok(&[
        "run", "--problem", "zermelo", "--epsilon", "0", "--grid-n", "100", "--out",
        dir.to_str().unwrap(),
    ]);
    let m = manifest(&dir);
    assert!(result_f64(&m, "true_l2_error").abs() <= 1e-12);
    assert!(result_f64(&m, "true_qoi_error").abs() <= 1e-12);
    assert!(result_f64(&m, "state_bound").abs() <= 1e-12);
    assert!(result_f64(&m, "qoi_bound").abs() <= 1e-12);
}

#[test]
fn singleton_sweep_matches_run() {
    let rdir = scratch("single-run");
    let sdir = scratch("single-sweep");
    run_ok(&[
        "run", "--problem", "zermelo", "--epsilon", "1e-2", "--grid-n", "200", "--out",
        rdir.to_str().unwrap(),
    ]);
    run_ok(&[
        "sweep", "--problem", "zermelo", "--eps-list", "1e-2", "--grid-n", "200", "--out",
        sdir.to_str().unwrap(),
    ]);
    let m = manifest(&rdir);
    let rows = csv_rows(&sdir.join("sweep.csv"));
    assert_eq!(
        rows[0],
        vec![
            "epsilon",
            "true_l2_error",
            "sensitivity_estimate",
            "state_bound",
            "true_qoi_error",
            "adjoint_qoi_estimate",
            "qoi_bound"
        ]
    );
    assert_eq!(rows.len(), 2);
    // Bit-exact agreement between the sweep row and the single run.
    for (col, key) in [
        (1, "true_l2_error"),
        (2, "sensitivity_estimate"),
        (3, "state_bound"),
        (4, "true_qoi_error"),
        (5, "adjoint_qoi_estimate"),
        (6, "qoi_bound"),
    ] {
        assert_eq!(cell(&rows, 1, col), result_f64(&m, key), "column {key}");
    }
}

#[test]
fn zermelo_state_stays_bounded() {
    let dir = scratch("zbound");
    run_ok(&[
        "run", "--problem", "zermelo", "--epsilon", "0.1", "--grid-n", "300", "--out",
        dir.to_str().unwrap(),
    ]);
    let rows = csv_rows(&dir.join("trajectories.csv"));
    for row in rows.iter().skip(1) {
        for cell in &row[1..=4] {
            let v: f64 = cell.parse().unwrap();
            assert!(v.abs() <= 4.0, "state component {v} out of range");
        }
    }
}

#[test]
fn hypersonic_comparison_caps_while_bound_finite() {
    let dir = scratch("hcap");
    run_ok(&[
        "run", "--problem", "hypersonic", "--epsilon", "0.01", "--grid-n", "800", "--out",
        dir.to_str().unwrap(),
    ]);
    let m = manifest(&dir);
    assert_eq!(m["results"]["comparison_capped"], true);
    assert_eq!(m["results"]["comparison_scaled_by_lipschitz"], true);
    assert!(result_f64(&m, "state_bound").is_finite());

    let rows = csv_rows(&dir.join("bounds.csv"));
    assert_eq!(
        rows[0],
        vec!["t", "delta_x_norm", "gronwall_e_over_l", "log_lipschitz"]
    );
    let mut hit_cap = false;
    for row in rows.iter().skip(1) {
        let delta: f64 = row[1].parse().unwrap();
        let e: f64 = row[2].parse().unwrap();
        assert!(delta.is_finite());
        if e >= 1e10 {
            hit_cap = true;
        }
    }
    assert!(hit_cap, "comparison bound never reached the cap");
    // Degrees in the trajectory table: the flight path angle stays within a
    // physical range that only makes sense in degrees.
    let traj = csv_rows(&dir.join("trajectories.csv"));
    assert_eq!(traj[0][4], "eps_gamma_deg");
    let gammas: Vec<f64> = traj.iter().skip(1).map(|r| r[4].parse().unwrap()).collect();
    assert!(gammas.iter().any(|g| g.abs() > 0.2), "gamma column looks like radians");
    assert!(gammas.iter().all(|g| g.abs() < 90.0));
}

#[test]
fn hypersonic_large_epsilon_underestimates() {
    let dir = scratch("hlarge");
    run_ok(&[
        "sweep", "--problem", "hypersonic", "--eps-list", "0.1,0.5", "--grid-n", "600", "--out",
        dir.to_str().unwrap(),
    ]);
    let rows = csv_rows(&dir.join("sweep.csv"));
    assert_eq!(rows.len(), 3);
    let undershoots = rows
        .iter()
        .skip(1)
        .filter(|r| {
            let true_err: f64 = r[1].parse().unwrap();
            let bound: f64 = r[3].parse().unwrap();
            bound < true_err
        })
        .count();
    assert!(undershoots > 0, "expected the first-order bound to undershoot at large epsilon");
}

#[test]
fn partial_sweep_marks_failures() {
    let dir = scratch("partial");
    let spec = dir.join("blowup.json");
    fs::write(
        &spec,
        r#"{
            "state_dim": 1,
            "component_dim": 1,
            "t0": 0.0,
            "tf": 1.0,
            "x0": [0.0],
            "m": [[-1.0]],
            "n": [[1.0]],
            "c": [0.0],
            "g_star": {"t": [0.0, 1.0], "values": [[0.0], [0.0]]},
            "deviation": {"t": [0.0, 1.0], "values": [[1e300], [1e300]]},
            "envelope": {"t": [0.0, 1.0], "values": [[1e300], [1e300]]},
            "qoi_terminal": [1.0],
            "grid_n": 100
        }"#,
    )
    .unwrap();
    let out = run(&[
        "sweep",
        "--problem-file",
        spec.to_str().unwrap(),
        "--eps-list",
        "1e-300,1e9",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 4, "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("stage integrate"));

    let rows = csv_rows(&dir.join("sweep.csv"));
    assert_eq!(rows.len(), 3);
    assert_ne!(rows[1][1], "NA", "small epsilon row should succeed");
    assert!(rows[2][1..].iter().all(|c| c == "NA"), "failed row keeps NA markers");

    let m = manifest(&dir);
    assert_eq!(m["failed_rows"], 1);
    assert_eq!(m["failures"][0]["epsilon"].as_f64().unwrap(), 1e9);
    assert!(m["failures"][0]["error"].as_str().unwrap().contains("stage"));
}

#[test]
fn config_errors_exit_two() {
    let dir = scratch("cfg-err");
    let out_dir = dir.to_str().unwrap();

    let missing_eps = run(&["run", "--problem", "zermelo", "--out", out_dir]);
    assert_eq!(code(&missing_eps), 2);
    assert!(stderr(&missing_eps).contains("epsilon"));

    let missing_out = run(&["run", "--problem", "zermelo", "--epsilon", "0.1"]);
    assert_eq!(code(&missing_out), 2);

    let no_problem = run(&["run", "--epsilon", "0.1", "--out", out_dir]);
    assert_eq!(code(&no_problem), 2);
    assert!(stderr(&no_problem).contains("problem"));

    let bad_q = run(&[
        "run", "--problem", "zermelo", "--epsilon", "0.1", "--out", out_dir, "--q-diag", "1.0",
    ]);
    assert_eq!(code(&bad_q), 2);
    assert!(stderr(&bad_q).contains("q diagonal"));

    let tiny_grid = run(&[
        "run", "--problem", "zermelo", "--epsilon", "0.1", "--out", out_dir, "--grid-n", "1",
    ]);
    assert_eq!(code(&tiny_grid), 2);

    let cfg = dir.join("bad.json");
    fs::write(&cfg, r#"{"bogus": 1}"#).unwrap();
    let unknown_field = run(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&unknown_field), 2);
    assert!(stderr(&unknown_field).contains("invalid config"));

    // clap rejects conflicting problem selectors on its own.
    let conflict = run(&[
        "run", "--problem", "zermelo", "--problem-file", "x.json", "--epsilon", "0.1", "--out",
        out_dir,
    ]);
    assert_eq!(code(&conflict), 2);
}

#[test]
fn custom_linear_problem_is_tight() {
    let dir = scratch("custom-tight");
    let spec = dir.join("osc.json");
    fs::write(
        &spec,
        r#"{
            "state_dim": 2,
            "component_dim": 1,
            "t0": 0.0,
            "tf": 2.0,
            "x0": [1.0, 0.0],
            "m": [[0.0, 1.0], [-1.0, -0.1]],
            "n": [[0.0], [1.0]],
            "c": [0.0, 0.0],
            "g_star": {"t": [0.0, 1.0, 2.0], "values": [[0.0], [0.5], [0.0]]},
            "deviation": {"t": [0.0, 2.0], "values": [[1.0], [1.0]]},
            "envelope": {"t": [0.0, 2.0], "values": [[1.0], [1.0]]},
            "qoi_terminal": [1.0, 0.0],
            "grid_n": 400
        }"#,
    )
    .unwrap();
    run_ok(&[
        "run",
        "--problem-file",
        spec.to_str().unwrap(),
        "--epsilon",
        "0.05",
        "--out",
        dir.to_str().unwrap(),
    ]);
    let m = manifest(&dir);
    let true_l2 = result_f64(&m, "true_l2_error");
    let estimate = result_f64(&m, "sensitivity_estimate");
    let bound = result_f64(&m, "state_bound");
    // Linear dynamics with the deviation saturating the envelope: estimate
    // and worst-case bound collapse onto the true error.
    assert!((estimate - true_l2).abs() <= 1e-6 * true_l2);
    assert!(bound >= estimate * (1.0 - 1e-9));
    assert!((bound - true_l2).abs() <= 1e-6 * true_l2);
    let true_qoi = result_f64(&m, "true_qoi_error").abs();
    let qoi_bound = result_f64(&m, "qoi_bound");
    assert!((qoi_bound - true_qoi).abs() <= 1e-4 * true_qoi);
}

#[test]
fn grid_refinement_stability() {
    let keys = ["sensitivity_estimate", "state_bound", "qoi_bound", "comparison_final"];
    for (problem, coarse, fine) in [("zermelo", "500", "1000"), ("hypersonic", "1000", "2000")] {
        let a = scratch(&format!("refine-{problem}-a"));
        let b = scratch(&format!("refine-{problem}-b"));
        for (dir, n) in [(&a, coarse), (&b, fine)] {
            run_ok(&[
                "run", "--problem", problem, "--epsilon", "1e-2", "--grid-n", n, "--out",
                dir.to_str().unwrap(),
            ]);
        }
        let (ma, mb) = (manifest(&a), manifest(&b));
        for key in keys {
            let (va, vb) = (result_f64(&ma, key), result_f64(&mb, key));
            let rel = (va - vb).abs() / vb.abs().max(1e-300);
            assert!(rel < 0.01, "{problem} {key}: {va} vs {vb} moved {rel:.2e}");
        }
    }
}

#[test]
fn check_validates_derivatives() {
    let out = run_ok(&["check", "--problem", "zermelo", "--grid-n", "200"]);
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(text.contains("all derivative checks passed"), "{text}");
    assert!(text.contains("dynamics"));
    assert!(text.contains("qoi"));
}

#[test]
fn config_file_flags_override() {
    let dir = scratch("cfg-file");
    let cfg = dir.join("cfg.json");
    fs::write(
        &cfg,
        r#"{
            "problem": "zermelo",
            "epsilon": 0.01,
            "grid": {"fixed": {"n": 150}},
            "seed": 9,
            "restarts": 3
        }"#,
    )
    .unwrap();
    run_ok(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--epsilon",
        "0.1",
        "--out",
        dir.to_str().unwrap(),
    ]);
    let m = manifest(&dir);
    // Flag wins over file; file wins over defaults.
    assert_eq!(m["config"]["epsilon"].as_f64().unwrap(), 0.1);
    assert_eq!(m["config"]["grid"]["n"], 150);
    assert_eq!(m["config"]["seed"], 9);
    assert_eq!(m["config"]["restarts"], 3);
}
