//! Artifact emission: RFC 4180 CSV tables and a JSON manifest.
//!
//! All numeric cells are written with 17 significant digits and a '.'
//! decimal separator so runs round-trip exactly. CSV bodies are fully
//! deterministic for a given config and seed; wall-clock data lives only in
//! the manifest.

use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use csv::{Terminator, WriterBuilder};

use crate::config::ResolvedConfig;
use crate::runner::{CaseOutput, SweepRow};
use crate::CliError;
use odesens_core::BenchmarkProblem;

const RAD_TO_DEG: f64 = 180.0 / std::f64::consts::PI;

/// 17 significant digits: enough to reconstruct the f64 bit pattern.
fn sig(v: f64) -> String {
    format!("{v:.16e}")
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("cannot write {}: {e}", path.display()))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, CliError> {
    WriterBuilder::new()
        .terminator(Terminator::CRLF)
        .from_path(path)
        .map_err(|e| io_err(path, e))
}

fn finish(path: &Path, mut w: csv::Writer<fs::File>) -> Result<(), CliError> {
    w.flush().map_err(|e| io_err(path, e))
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", dir.display())))
}

/// Per-state column labels; angle states carry a `_deg` suffix and are
/// converted on output.
fn state_columns(problem: &BenchmarkProblem) -> Vec<String> {
    problem
        .state_labels
        .iter()
        .enumerate()
        .map(|(i, l)| {
            if problem.degree_indices.contains(&i) {
                format!("{l}_deg")
            } else {
                (*l).to_string()
            }
        })
        .collect()
}

fn state_cell(problem: &BenchmarkProblem, i: usize, v: f64) -> String {
    if problem.degree_indices.contains(&i) {
        sig(v * RAD_TO_DEG)
    } else {
        sig(v)
    }
}

fn write_trajectories(
    dir: &Path,
    problem: &BenchmarkProblem,
    case: &CaseOutput,
) -> Result<(), CliError> {
    let path = dir.join("trajectories.csv");
    let mut w = csv_writer(&path)?;
    let cols = state_columns(problem);
    let mut header = vec!["t".to_string()];
    header.extend(cols.iter().map(|c| format!("eps_{c}")));
    header.extend(cols.iter().map(|c| format!("star_{c}")));
    header.push("err_norm".to_string());
    w.write_record(&header).map_err(|e| io_err(&path, e))?;

    let nodes = case.x_eps.grid().nodes();
    for (i, &t) in nodes.iter().enumerate() {
        let mut row = vec![sig(t)];
        let xe = &case.x_eps.states()[i];
        let xs = &case.x_star.states()[i];
        for j in 0..xe.len() {
            row.push(state_cell(problem, j, xe[j]));
        }
        for j in 0..xs.len() {
            row.push(state_cell(problem, j, xs[j]));
        }
        row.push(sig(case.node_error[i]));
        w.write_record(&row).map_err(|e| io_err(&path, e))?;
    }
    finish(&path, w)
}

fn write_bounds(dir: &Path, case: &CaseOutput) -> Result<(), CliError> {
    let path = dir.join("bounds.csv");
    let mut w = csv_writer(&path)?;
    let comparison_col = if case.comparison_scaled {
        "gronwall_e_over_l"
    } else {
        "gronwall_e"
    };
    w.write_record(["t", "delta_x_norm", comparison_col, "log_lipschitz"])
        .map_err(|e| io_err(&path, e))?;
    let nodes = case.x_eps.grid().nodes();
    for (i, &t) in nodes.iter().enumerate() {
        w.write_record([
            sig(t),
            sig(case.certificate_norm[i]),
            sig(case.comparison[i]),
            sig(case.log_lipschitz[i]),
        ])
        .map_err(|e| io_err(&path, e))?;
    }
    finish(&path, w)
}

fn write_qoi(dir: &Path, case: &CaseOutput) -> Result<(), CliError> {
    let path = dir.join("qoi.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["q_eps", "q_star", "adjoint_estimate", "qoi_bound"])
        .map_err(|e| io_err(&path, e))?;
    w.write_record([
        sig(case.q_eps),
        sig(case.q_star),
        sig(case.qoi_estimate),
        sig(case.qoi_bound),
    ])
    .map_err(|e| io_err(&path, e))?;
    finish(&path, w)
}

fn created_unix_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

fn versions() -> serde_json::Value {
    serde_json::json!({
        "odesens_core": odesens_core::VERSION,
        "odesens_cli": env!("CARGO_PKG_VERSION"),
    })
}

fn write_manifest(dir: &Path, manifest: &serde_json::Value) -> Result<(), CliError> {
    let path = dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(manifest)
        .map_err(|e| io_err(&path, e))?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| io_err(&path, e))
}

/// Writes trajectories.csv, bounds.csv, qoi.csv, and manifest.json for one
/// run.
pub fn write_run(
    dir: &Path,
    cfg: &ResolvedConfig,
    problem: &BenchmarkProblem,
    case: &CaseOutput,
) -> Result<(), CliError> {
    ensure_dir(dir)?;
    write_trajectories(dir, problem, case)?;
    write_bounds(dir, case)?;
    write_qoi(dir, case)?;
    let manifest = serde_json::json!({
        "command": "run",
        "config": cfg,
        "problem": {
            "name": problem.name,
            "epsilon": problem.epsilon,
            "state_labels": state_columns(problem),
        },
        "versions": versions(),
        "results": {
            "true_l2_error": case.true_l2,
            "sensitivity_estimate": case.estimate_l2,
            "state_bound": case.state_bound,
            "state_bound_refinement_delta_rel": case.refinement_delta_rel,
            "q_eps": case.q_eps,
            "q_star": case.q_star,
            "true_qoi_error": case.q_eps - case.q_star,
            "adjoint_qoi_estimate": case.qoi_estimate,
            "qoi_bound": case.qoi_bound,
            "comparison_final": case.comparison.last().copied(),
            "comparison_scaled_by_lipschitz": case.comparison_scaled,
            "comparison_capped": case.comparison_capped,
        },
        "timings_s": case.timings,
        "created_unix_ms": created_unix_ms(),
    });
    write_manifest(dir, &manifest)
}

/// Writes sweep.csv and manifest.json; failed epsilons become NA rows plus a
/// manifest entry.
pub fn write_sweep(
    dir: &Path,
    cfg: &ResolvedConfig,
    problem_name: &str,
    rows: &[SweepRow],
    total_s: f64,
) -> Result<(), CliError> {
    ensure_dir(dir)?;
    let path = dir.join("sweep.csv");
    let mut w = csv_writer(&path)?;
    w.write_record([
        "epsilon",
        "true_l2_error",
        "sensitivity_estimate",
        "state_bound",
        "true_qoi_error",
        "adjoint_qoi_estimate",
        "qoi_bound",
    ])
    .map_err(|e| io_err(&path, e))?;
    for row in rows {
        match &row.outcome {
            Ok(s) => w.write_record([
                sig(row.epsilon),
                sig(s.true_l2),
                sig(s.estimate_l2),
                sig(s.state_bound),
                sig(s.true_qoi),
                sig(s.qoi_estimate),
                sig(s.qoi_bound),
            ]),
            Err(_) => w.write_record([
                sig(row.epsilon),
                "NA".into(),
                "NA".into(),
                "NA".into(),
                "NA".into(),
                "NA".into(),
                "NA".into(),
            ]),
        }
        .map_err(|e| io_err(&path, e))?;
    }
    finish(&path, w)?;

    let failures: Vec<serde_json::Value> = rows
        .iter()
        .filter_map(|r| {
            r.outcome.as_ref().err().map(|e| {
                serde_json::json!({ "epsilon": r.epsilon, "error": e.to_string() })
            })
        })
        .collect();
    let manifest = serde_json::json!({
        "command": "sweep",
        "config": cfg,
        "problem": { "name": problem_name },
        "versions": versions(),
        "rows": rows.len(),
        "failed_rows": failures.len(),
        "failures": failures,
        "timings_s": { "total": total_s },
        "created_unix_ms": created_unix_ms(),
    });
    write_manifest(dir, &manifest)
}
