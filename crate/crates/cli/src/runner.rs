//! Experiment pipeline shared by `run`, `sweep`, and `check`.
//!
//! Every numerical stage is wrapped so failures surface as a structured
//! message naming the stage that broke. A sweep keeps going past per-epsilon
//! failures and reports them as missing rows.

use std::fmt;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::config::{ProblemHandle, QWeight, ResolvedConfig};
use odesens_core::fdcheck::{
    check_component_derivatives, check_dynamics_derivatives, check_qoi_derivatives,
    DEFAULT_FD_STEP,
};
use odesens_core::{
    evaluate_qoi, gronwall_state_bound, linearize, log_lipschitz_along, qoi_directional_derivative,
    qoi_error_bound, solve_adjoint, solve_sensitivity, state_error_bound, state_error_norm,
    BenchmarkProblem, GridSpec, MatrixSignal, QpOptions, Trajectory,
};

/// A pipeline failure tagged with the stage that produced it.
#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub message: String,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage {}: {}", self.stage, self.message)
    }
}

fn stage<T>(name: &'static str, r: odesens_core::Result<T>) -> Result<T, StageError> {
    r.map_err(|e| StageError {
        stage: name,
        message: e.to_string(),
    })
}

/// Wall-clock seconds per pipeline phase.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct Timings {
    pub integrate: f64,
    pub sensitivity: f64,
    pub state_bound: f64,
    pub qoi: f64,
    pub comparison: f64,
    pub total: f64,
}

/// Everything one problem instance produces, ready for the artifact writers.
pub struct CaseOutput {
    pub x_eps: Trajectory,
    pub x_star: Trajectory,
    /// `||x_eps - x_star||` at each node.
    pub node_error: Vec<f64>,
    /// `||delta_x(t)||` of the worst-case certificate at each node.
    pub certificate_norm: Vec<f64>,
    /// Comparison bound per node, already divided by L when the problem
    /// reports `E/L`.
    pub comparison: Vec<f64>,
    pub comparison_scaled: bool,
    pub comparison_capped: bool,
    pub log_lipschitz: Vec<f64>,
    pub true_l2: f64,
    pub estimate_l2: f64,
    pub state_bound: f64,
    pub refinement_delta_rel: Option<f64>,
    pub q_eps: f64,
    pub q_star: f64,
    pub qoi_estimate: f64,
    pub qoi_bound: f64,
    pub timings: Timings,
}

/// Runs the full pipeline for one problem instance: integrate both sides,
/// linearize along the perturbed trajectory, then the sensitivity estimate,
/// the worst-case bounds, the adjoint QoI numbers, and the comparison bound.
pub fn solve_case(problem: &BenchmarkProblem, cfg: &ResolvedConfig) -> Result<CaseOutput, StageError> {
    let t_total = Instant::now();
    let grid = stage("grid", problem.output_grid(Some(cfg.grid.n)))?;
    let spec = if cfg.grid.adaptive {
        GridSpec::adaptive(problem.t0, problem.tf, cfg.grid.rtol, cfg.grid.atol)
    } else {
        GridSpec::fixed(grid.clone())
    };

    let t0 = Instant::now();
    let mut x_eps = stage("integrate", problem.solve_eps(&spec))?;
    let mut x_star = stage("integrate", problem.solve_star(&spec))?;
    if cfg.grid.adaptive {
        x_eps = stage("resample", x_eps.resample(grid.clone()))?;
        x_star = stage("resample", x_star.resample(grid.clone()))?;
    }
    let integrate_s = t0.elapsed().as_secs_f64();

    let dim = x_eps.dim();
    let qmat = match &cfg.q_weight {
        QWeight::Identity => None,
        QWeight::Diag(d) => Some(DMatrix::from_diagonal(&DVector::from_vec(d.clone()))),
    };
    let qsig = qmat
        .as_ref()
        .map(|m| MatrixSignal::constant(grid.clone(), m.clone()));

    let diff = stage("difference", x_eps.difference(&x_star))?;
    let node_error: Vec<f64> = diff.states().iter().map(|s| s.norm()).collect();
    let true_l2 = stage("error_norm", state_error_norm(&diff, qsig.as_ref()))?;

    let t0 = Instant::now();
    let lin = stage(
        "linearize",
        linearize(problem.dynamics.as_ref(), problem.g_eps.as_ref(), &x_eps),
    )?;
    let dev = problem.deviation_samples(&x_eps);
    let env = problem.envelope_samples(&x_eps);
    let sens = stage("sensitivity", solve_sensitivity(&lin, &dev))?;
    let estimate_l2 = stage("error_norm", state_error_norm(&sens.delta_x, qsig.as_ref()))?;
    let sensitivity_s = t0.elapsed().as_secs_f64();

    let t0 = Instant::now();
    let qp_opts = QpOptions {
        restarts: cfg.restarts,
        seed: cfg.seed,
        ..QpOptions::default()
    };
    let bound = stage(
        "state_bound",
        state_error_bound(&lin, qmat.as_ref(), &env, &qp_opts),
    )?;
    let cert = bound.delta_x.as_ref().ok_or_else(|| StageError {
        stage: "state_bound",
        message: "missing certificate trajectory".into(),
    })?;
    let certificate_norm: Vec<f64> = cert.states().iter().map(|s| s.norm()).collect();
    let state_bound_s = t0.elapsed().as_secs_f64();

    let t0 = Instant::now();
    let qoi = problem.qoi.as_ref();
    let q_eps = stage("qoi", evaluate_qoi(qoi, &x_eps, problem.g_eps.as_ref()))?;
    let q_star = stage("qoi", evaluate_qoi(qoi, &x_star, problem.g_star.as_ref()))?;
    let adj = stage(
        "adjoint",
        solve_adjoint(&lin, qoi, &x_eps, problem.g_eps.as_ref()),
    )?;
    let qoi_estimate = stage(
        "qoi_estimate",
        qoi_directional_derivative(&adj, &lin, qoi, &x_eps, problem.g_eps.as_ref(), &dev),
    )?;
    let qoi_bound = stage(
        "qoi_bound",
        qoi_error_bound(&adj, &lin, qoi, &x_eps, problem.g_eps.as_ref(), &env),
    )?;
    let qoi_s = t0.elapsed().as_secs_f64();

    let t0 = Instant::now();
    let qref = qmat.clone().unwrap_or_else(|| DMatrix::identity(dim, dim));
    let llip = stage(
        "log_lipschitz",
        log_lipschitz_along(problem.dynamics.as_ref(), problem.g_eps.as_ref(), &x_eps, &qref),
    )?;
    let env_norm: Vec<f64> = env.iter().map(|e| e.norm()).collect();
    let comp = stage(
        "comparison_bound",
        gronwall_state_bound(&llip, &env_norm, cfg.lipschitz, cfg.cap),
    )?;
    let comparison_scaled = problem.report_scaled_by_lipschitz && cfg.lipschitz > 0.0;
    let scale = if comparison_scaled { cfg.lipschitz } else { 1.0 };
    let comparison: Vec<f64> = comp.e.iter().map(|v| v / scale).collect();
    let comparison_s = t0.elapsed().as_secs_f64();

    Ok(CaseOutput {
        node_error,
        certificate_norm,
        comparison,
        comparison_scaled,
        comparison_capped: comp.capped,
        log_lipschitz: llip.values().to_vec(),
        true_l2,
        estimate_l2,
        state_bound: bound.value,
        refinement_delta_rel: bound.diagnostics.refinement_delta_rel,
        q_eps,
        q_star,
        qoi_estimate,
        qoi_bound: qoi_bound.value,
        timings: Timings {
            integrate: integrate_s,
            sensitivity: sensitivity_s,
            state_bound: state_bound_s,
            qoi: qoi_s,
            comparison: comparison_s,
            total: t_total.elapsed().as_secs_f64(),
        },
        x_eps,
        x_star,
    })
}

/// Scalar summary of one sweep row.
#[derive(Debug, Clone, Copy)]
pub struct SweepScalars {
    pub true_l2: f64,
    pub estimate_l2: f64,
    pub state_bound: f64,
    pub true_qoi: f64,
    pub qoi_estimate: f64,
    pub qoi_bound: f64,
}

impl From<&CaseOutput> for SweepScalars {
    fn from(c: &CaseOutput) -> Self {
        Self {
            true_l2: c.true_l2,
            estimate_l2: c.estimate_l2,
            state_bound: c.state_bound,
            true_qoi: c.q_eps - c.q_star,
            qoi_estimate: c.qoi_estimate,
            qoi_bound: c.qoi_bound,
        }
    }
}

pub struct SweepRow {
    pub epsilon: f64,
    pub outcome: Result<SweepScalars, StageError>,
}

/// Runs `solve_case` once per epsilon on a worker pool. Rows come back in
/// sweep order; failures are carried, not fatal.
pub fn epsilon_sweep(handle: &ProblemHandle, cfg: &ResolvedConfig) -> Result<Vec<SweepRow>, StageError> {
    let eps_list = cfg.eps_list.clone().unwrap_or_default();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| StageError {
            stage: "worker_pool",
            message: e.to_string(),
        })?;
    Ok(pool.install(|| {
        eps_list
            .par_iter()
            .map(|&epsilon| {
                let problem = handle.build(epsilon);
                SweepRow {
                    epsilon,
                    outcome: solve_case(&problem, cfg).map(|c| SweepScalars::from(&c)),
                }
            })
            .collect()
    }))
}

/// One derivative-check row: which model block, which partial, worst
/// relative finite-difference error over the probe set.
pub struct CheckLine {
    pub block: &'static str,
    pub partial: String,
    pub max_rel_err: f64,
}

/// Validates the analytic Jacobians and gradients of a problem against
/// central finite differences along its reference trajectory.
pub fn derivative_check(
    problem: &BenchmarkProblem,
    cfg: &ResolvedConfig,
) -> Result<Vec<CheckLine>, StageError> {
    let grid = stage("grid", problem.output_grid(Some(cfg.grid.n)))?;
    let spec = if cfg.grid.adaptive {
        GridSpec::adaptive(problem.t0, problem.tf, cfg.grid.rtol, cfg.grid.atol)
    } else {
        GridSpec::fixed(grid.clone())
    };
    let mut traj = stage("integrate", problem.solve_star(&spec))?;
    if cfg.grid.adaptive {
        traj = stage("resample", traj.resample(grid))?;
    }

    // Eight probe points spread across the horizon, endpoints included.
    let last = traj.grid().len() - 1;
    let probes: Vec<(f64, DVector<f64>)> = (0..8)
        .map(|i| {
            let idx = i * last / 7;
            (traj.grid().nodes()[idx], traj.states()[idx].clone())
        })
        .collect();
    let probes_g: Vec<(f64, DVector<f64>, DVector<f64>)> = probes
        .iter()
        .map(|(t, x)| (*t, x.clone(), problem.g_star.eval(*t, x)))
        .collect();

    let mut lines = Vec::new();
    let mut push = |block: &'static str, report: odesens_core::fdcheck::DerivativeReport| {
        for check in report.checks {
            lines.push(CheckLine {
                block,
                partial: check.partial,
                max_rel_err: check.max_rel_err,
            });
        }
    };
    push(
        "dynamics",
        stage(
            "check_dynamics",
            check_dynamics_derivatives(problem.dynamics.as_ref(), &probes_g, DEFAULT_FD_STEP),
        )?,
    );
    push(
        "g_star",
        stage(
            "check_component",
            check_component_derivatives(problem.g_star.as_ref(), &probes, DEFAULT_FD_STEP),
        )?,
    );
    push(
        "g_eps",
        stage(
            "check_component",
            check_component_derivatives(problem.g_eps.as_ref(), &probes, DEFAULT_FD_STEP),
        )?,
    );
    push(
        "qoi",
        stage(
            "check_qoi",
            check_qoi_derivatives(problem.qoi.as_ref(), &probes_g, DEFAULT_FD_STEP),
        )?,
    );
    Ok(lines)
}
