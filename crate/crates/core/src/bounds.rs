//! Worst-case error bounds over envelope-feasible component deviations.
//!
//! The state bound maximizes the weighted L2 norm of the linearized error
//! response over piecewise-constant deviations bounded per interval by the
//! error envelope. Condensing the linear dynamics turns this into a box
//! constrained concave-free QP `max 0.5 d^T H d` with `H = S^T Qhat S` PSD,
//! whose maximum is attained at a sign vertex of the box. The QoI bound is a
//! closed-form LP on the adjoint weight.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{OdeSensError, Result};
use crate::grid::{quadrature, TimeGrid};
use crate::model::{ComponentModel, LinearizedSystem, QoiModel};
use crate::sensitivity::{qoi_weight_samples, AdjointResult};
use crate::trajectory::{MatrixSignal, Trajectory};

/// Hard ceiling on exhaustive vertex enumeration, `2^26` objective calls.
const EXHAUSTIVE_HARD_LIMIT: usize = 26;

/// Maximum sign-vertex polish moves after gradient ascent.
const MAX_POLISH_MOVES: usize = 200;

/// Relative objective stall treated as ascent convergence. Scale invariant,
/// so scaling the envelope rescales iterates without changing decisions.
const OBJ_STALL_TOL: f64 = 1e-14;

/// Iterations of power iteration used to estimate the spectral norm of H.
const POWER_ITERS: usize = 60;

/// Box-constrained QP `max 0.5 d^T H d subject to |d_j| <= bounds_j`.
///
/// For state bounds H is kept in factored form (per-interval transition and
/// injection matrices plus node quadrature weights) and applied
/// operator-style; the full matrix is never materialized. Small dense
/// instances can be built directly for testing and reuse the same solver.
pub struct CondensedBoxQP {
    grid: TimeGrid,
    bounds: DVector<f64>,
    rep: HRep,
}

enum HRep {
    Factored {
        /// Per-interval transition: `x_{j+1} = phi_j x_j + gamma_j d_j`.
        phi: Vec<DMatrix<f64>>,
        gamma: Vec<DMatrix<f64>>,
        /// SPD norm weight shared by every node.
        q: DMatrix<f64>,
        /// Trapezoid weights for nodes `1..=N` (node 0 carries `x_0 = 0`).
        node_weights: Vec<f64>,
        state_dim: usize,
        control_dim: usize,
    },
    Dense {
        h: DMatrix<f64>,
    },
}

impl CondensedBoxQP {
    /// Wraps an explicit symmetric matrix; intended for small test instances.
    pub fn from_dense(h: DMatrix<f64>, bounds: Vec<f64>) -> Result<Self> {
        if h.nrows() != h.ncols() {
            return Err(OdeSensError::Validation(
                "dense QP matrix must be square".into(),
            ));
        }
        if h.nrows() == 0 {
            return Err(OdeSensError::Validation("dense QP must be nonempty".into()));
        }
        if bounds.len() != h.nrows() {
            return Err(OdeSensError::DimensionMismatch {
                context: "dense QP bounds".into(),
                expected: format!("{}", h.nrows()),
                actual: format!("{}", bounds.len()),
            });
        }
        let slack = 1e-10 * h.norm().max(1.0);
        if (&h - h.transpose()).amax() > slack {
            return Err(OdeSensError::Validation(
                "dense QP matrix must be symmetric".into(),
            ));
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(OdeSensError::NonFinite {
                what: "dense QP matrix entry".into(),
                t: f64::NAN,
            });
        }
        validate_box(&bounds)?;
        // The grid is a placeholder for dense instances; only the factored
        // form ties coordinates to time intervals.
        let grid = TimeGrid::uniform(0.0, 1.0, bounds.len())?;
        Ok(Self {
            grid,
            bounds: DVector::from_vec(bounds),
            rep: HRep::Dense { h },
        })
    }

    /// Number of decision variables (intervals times control dimension).
    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &DVector<f64> {
        &self.bounds
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// Control dimension per interval for factored instances.
    pub fn control_dim(&self) -> Option<usize> {
        match &self.rep {
            HRep::Factored { control_dim, .. } => Some(*control_dim),
            HRep::Dense { .. } => None,
        }
    }

    /// Objective `0.5 d^T H d`. Never forms H for factored instances.
    pub fn objective(&self, d: &DVector<f64>) -> f64 {
        match &self.rep {
            HRep::Dense { h } => 0.5 * d.dot(&(h * d)),
            HRep::Factored {
                q, node_weights, ..
            } => {
                let xs = self.forward_states(d);
                let mut acc = 0.0;
                for (x, w) in xs.iter().zip(node_weights) {
                    acc += w * x.dot(&(q * x));
                }
                0.5 * acc
            }
        }
    }

    /// Gradient `H d`, applied operator-style for factored instances.
    pub fn apply_h(&self, d: &DVector<f64>) -> DVector<f64> {
        self.grad_value(d).0
    }

    /// Gradient and objective from one propagation sweep.
    fn grad_value(&self, d: &DVector<f64>) -> (DVector<f64>, f64) {
        match &self.rep {
            HRep::Dense { h } => {
                let g = h * d;
                let val = 0.5 * d.dot(&g);
                (g, val)
            }
            HRep::Factored {
                phi,
                gamma,
                q,
                node_weights,
                control_dim,
                ..
            } => {
                let n = phi.len();
                let xs = self.forward_states(d);
                let mut val = 0.0;
                let ys: Vec<DVector<f64>> = xs
                    .iter()
                    .zip(node_weights)
                    .map(|(x, w)| {
                        let y = *w * (q * x);
                        val += x.dot(&y);
                        y
                    })
                    .collect();
                let mut out = DVector::zeros(n * control_dim);
                // vbar walks v_{j+1} = y_{j+1} + phi_{j+1}^T v_{j+2} downward.
                let mut vbar = ys[n - 1].clone();
                out.rows_mut((n - 1) * control_dim, *control_dim)
                    .copy_from(&(gamma[n - 1].transpose() * &vbar));
                for j in (0..n - 1).rev() {
                    vbar = &ys[j] + phi[j + 1].transpose() * vbar;
                    out.rows_mut(j * control_dim, *control_dim)
                        .copy_from(&(gamma[j].transpose() * &vbar));
                }
                (out, 0.5 * val)
            }
        }
    }

    /// States `x_1..x_N` of the condensed dynamics driven by stacked
    /// controls; `x_0 = 0` is omitted. Empty for dense instances.
    fn forward_states(&self, d: &DVector<f64>) -> Vec<DVector<f64>> {
        match &self.rep {
            HRep::Dense { .. } => Vec::new(),
            HRep::Factored {
                phi,
                gamma,
                state_dim,
                control_dim,
                ..
            } => {
                let n = phi.len();
                let mut xs = Vec::with_capacity(n);
                let mut x = DVector::zeros(*state_dim);
                for j in 0..n {
                    let dj = d.rows(j * control_dim, *control_dim);
                    x = &phi[j] * x + &gamma[j] * dj;
                    xs.push(x.clone());
                }
                xs
            }
        }
    }

    /// Full node states `x_0 = 0, x_1, ..., x_N` for a stacked control vector.
    /// `None` for dense instances, which carry no dynamics.
    pub fn propagate(&self, d: &DVector<f64>) -> Option<Vec<DVector<f64>>> {
        match &self.rep {
            HRep::Dense { .. } => None,
            HRep::Factored { state_dim, .. } => {
                let mut states = Vec::with_capacity(self.grid.len());
                states.push(DVector::zeros(*state_dim));
                states.extend(self.forward_states(d));
                Some(states)
            }
        }
    }
}

fn validate_box(bounds: &[f64]) -> Result<()> {
    if bounds.iter().any(|b| !b.is_finite() || *b < 0.0) {
        return Err(OdeSensError::Validation(
            "box bounds must be finite and nonnegative".into(),
        ));
    }
    Ok(())
}

fn validate_weight(q: &DMatrix<f64>, state_dim: usize) -> Result<DMatrix<f64>> {
    if q.nrows() != q.ncols() || q.nrows() != state_dim {
        return Err(OdeSensError::DimensionMismatch {
            context: "state bound weight matrix".into(),
            expected: format!("{state_dim} x {state_dim}"),
            actual: format!("{} x {}", q.nrows(), q.ncols()),
        });
    }
    let slack = 1e-10 * q.norm().max(1.0);
    if (q - q.transpose()).amax() > slack {
        return Err(OdeSensError::Validation(
            "state bound weight matrix must be symmetric".into(),
        ));
    }
    Ok(q.clone())
}

fn validate_envelope_samples(
    grid: &TimeGrid,
    dim: usize,
    eps_along: &[DVector<f64>],
) -> Result<()> {
    if eps_along.len() != grid.len() {
        return Err(OdeSensError::DimensionMismatch {
            context: "envelope samples".into(),
            expected: format!("{} node samples", grid.len()),
            actual: format!("{}", eps_along.len()),
        });
    }
    for (i, e) in eps_along.iter().enumerate() {
        if e.len() != dim {
            return Err(OdeSensError::DimensionMismatch {
                context: "envelope sample dimension".into(),
                expected: format!("{dim}"),
                actual: format!("{}", e.len()),
            });
        }
        if e.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(OdeSensError::Validation(format!(
                "envelope sample at t = {} must be finite and nonnegative",
                grid.nodes()[i]
            )));
        }
    }
    Ok(())
}

/// Condenses the linearized error dynamics into a box QP. Controls are
/// piecewise constant per interval with box radius taken from the envelope at
/// the interval's left endpoint; the transition matrices reproduce one
/// classical Runge-Kutta step of `x' = A(t) x + B(t) d` with A and B
/// interpolated linearly, matching the forward linear solver exactly.
pub fn build_state_bound_qp(
    lin: &LinearizedSystem,
    q: Option<&DMatrix<f64>>,
    eps_along: &[DVector<f64>],
) -> Result<CondensedBoxQP> {
    let grid = lin.grid().clone();
    let sd = lin.state_dim();
    let cd = lin.component_dim();
    validate_envelope_samples(&grid, cd, eps_along)?;
    let q = match q {
        Some(m) => validate_weight(m, sd)?,
        None => DMatrix::identity(sd, sd),
    };
    let n = grid.intervals();
    let nodes = grid.nodes();
    let eye = DMatrix::<f64>::identity(sd, sd);
    let mut phi = Vec::with_capacity(n);
    let mut gamma = Vec::with_capacity(n);
    for j in 0..n {
        let h = nodes[j + 1] - nodes[j];
        let a0 = lin.a().value(j);
        let a1 = lin.a().value(j + 1);
        let am = 0.5 * (a0 + a1);
        let b0 = lin.b().value(j);
        let b1 = lin.b().value(j + 1);
        let bm = 0.5 * (b0 + b1);

        let k1 = a0.clone();
        let k2 = &am * (&eye + 0.5 * h * &k1);
        let k3 = &am * (&eye + 0.5 * h * &k2);
        let k4 = a1 * (&eye + h * &k3);
        phi.push(&eye + (h / 6.0) * (&k1 + 2.0 * &k2 + 2.0 * &k3 + &k4));

        let l1 = b0.clone();
        let l2 = &am * (0.5 * h * &l1) + &bm;
        let l3 = &am * (0.5 * h * &l2) + &bm;
        let l4 = a1 * (h * &l3) + b1;
        gamma.push((h / 6.0) * (&l1 + 2.0 * &l2 + 2.0 * &l3 + &l4));
    }
    let node_weights = grid.trapezoid_weights()[1..].to_vec();
    let mut bounds = DVector::zeros(n * cd);
    for (j, eps) in eps_along.iter().take(n).enumerate() {
        bounds.rows_mut(j * cd, cd).copy_from(eps);
    }
    Ok(CondensedBoxQP {
        grid,
        bounds,
        rep: HRep::Factored {
            phi,
            gamma,
            q,
            node_weights,
            state_dim: sd,
            control_dim: cd,
        },
    })
}

/// Solver configuration for [`maximize_box_qp`].
#[derive(Debug, Clone)]
pub struct QpOptions {
    /// Random sign-vertex restarts beyond the two deterministic starts.
    pub restarts: usize,
    /// Projected gradient iterations per start.
    pub max_iters: usize,
    /// Relative stationarity threshold on the iterate displacement.
    pub stationarity_tol: f64,
    /// Seed for restart vertices and the spectral norm estimate.
    pub seed: u64,
    /// Instances with dimension at or below this are solved by exhaustive
    /// vertex enumeration, which is exact.
    pub exhaustive_limit: usize,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self {
            restarts: 8,
            max_iters: 500,
            stationarity_tol: 1e-12,
            seed: 42,
            exhaustive_limit: 16,
        }
    }
}

/// Solver trace attached to each solution.
#[derive(Debug, Clone)]
pub struct QpDiagnostics {
    /// Starts actually explored (0 for the exhaustive path).
    pub restarts: usize,
    /// Total gradient iterations, or vertices visited when exhaustive.
    pub iterations: usize,
    /// Best objective value found by each start, in start order.
    pub objective_history: Vec<f64>,
    /// False when some start hit the iteration limit before stationarity.
    pub converged: bool,
    /// True when the instance was solved by exhaustive enumeration.
    pub exhaustive: bool,
}

/// Maximizer of the box QP together with its objective value.
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub value: f64,
    pub maximizer: DVector<f64>,
    pub diagnostics: QpDiagnostics,
}

/// Maximizes `0.5 d^T H d` over the box. Exhaustive and exact when the
/// dimension is at most `opts.exhaustive_limit`; otherwise projected gradient
/// ascent from deterministic and seeded random sign vertices, each refined to
/// a sign-vertex fixed point. Deterministic given the options.
pub fn maximize_box_qp(qp: &CondensedBoxQP, opts: &QpOptions) -> Result<QpSolution> {
    let dim = qp.dim();
    if dim == 0 {
        return Err(OdeSensError::Validation("empty QP".into()));
    }
    if opts.max_iters == 0 && dim > opts.exhaustive_limit {
        return Err(OdeSensError::Validation(
            "iterative QP path needs max_iters > 0".into(),
        ));
    }
    if dim <= opts.exhaustive_limit.min(EXHAUSTIVE_HARD_LIMIT) {
        return Ok(maximize_exhaustive(qp));
    }

    let b = qp.bounds().clone();
    let bscale = b.amax();
    let (hnorm, dominant) = power_iteration(qp, opts.seed ^ 0x9e37_79b9_7f4a_7c15);
    let step = if hnorm > 0.0 { 1.0 / hnorm } else { 1.0 };

    let mut starts: Vec<DVector<f64>> = Vec::with_capacity(opts.restarts + 2);
    starts.push(b.clone());
    starts.push(DVector::from_fn(dim, |j, _| {
        if dominant[j] < 0.0 {
            -b[j]
        } else {
            b[j]
        }
    }));
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for _ in 0..opts.restarts {
        starts.push(DVector::from_fn(dim, |j, _| {
            if rng.random::<bool>() {
                b[j]
            } else {
                -b[j]
            }
        }));
    }

    let mut best_val = f64::NEG_INFINITY;
    let mut best = b.clone();
    let mut best_converged = false;
    let mut history = Vec::with_capacity(starts.len());
    let mut total_iters = 0usize;
    for start in starts {
        let (x, val, iters, converged) = ascend_from(qp, start, step, bscale, opts);
        total_iters += iters;
        history.push(val);
        if val > best_val {
            best_val = val;
            best = x;
            best_converged = converged;
        }
    }
    Ok(QpSolution {
        value: best_val,
        maximizer: best,
        diagnostics: QpDiagnostics {
            restarts: history.len(),
            iterations: total_iters,
            objective_history: history,
            converged: best_converged,
            exhaustive: false,
        },
    })
}

fn maximize_exhaustive(qp: &CondensedBoxQP) -> QpSolution {
    let dim = qp.dim();
    let b = qp.bounds();
    let mut best_val = f64::NEG_INFINITY;
    let mut best = DVector::zeros(dim);
    let mut d = DVector::zeros(dim);
    let count = 1usize << dim;
    for mask in 0..count {
        for j in 0..dim {
            d[j] = if mask >> j & 1 == 1 { -b[j] } else { b[j] };
        }
        let val = qp.objective(&d);
        if val > best_val {
            best_val = val;
            best.copy_from(&d);
        }
    }
    QpSolution {
        value: best_val,
        maximizer: best,
        diagnostics: QpDiagnostics {
            restarts: 0,
            iterations: count,
            objective_history: vec![best_val],
            converged: true,
            exhaustive: true,
        },
    }
}

/// Spectral norm estimate of H and the final power iterate. Depends only on
/// H, never on the box, so scaling the envelope leaves it untouched.
fn power_iteration(qp: &CondensedBoxQP, seed: u64) -> (f64, DVector<f64>) {
    let dim = qp.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = DVector::from_fn(dim, |_, _| rng.random_range(-1.0..=1.0));
    let norm = v.norm();
    if norm == 0.0 {
        v = DVector::from_element(dim, 1.0);
    } else {
        v /= norm;
    }
    let mut lambda = 0.0;
    for _ in 0..POWER_ITERS {
        let w = qp.apply_h(&v);
        let n = w.norm();
        if n == 0.0 {
            return (0.0, v);
        }
        lambda = n;
        v = w / n;
    }
    (lambda, v)
}

/// One projected gradient ascent run followed by sign-vertex polish.
/// Returns (point, objective, iterations, hit stationarity).
fn ascend_from(
    qp: &CondensedBoxQP,
    start: DVector<f64>,
    step: f64,
    bscale: f64,
    opts: &QpOptions,
) -> (DVector<f64>, f64, usize, bool) {
    let b = qp.bounds();
    let dim = qp.dim();
    let mut x = start;
    let mut converged = false;
    let mut iters = 0usize;
    let mut last_val = f64::NEG_INFINITY;
    for _ in 0..opts.max_iters {
        iters += 1;
        let (g, val) = qp.grad_value(&x);
        if iters > 1 && val - last_val <= OBJ_STALL_TOL * val.abs() {
            converged = true;
            break;
        }
        last_val = val;
        let mut y = &x + step * g;
        for j in 0..dim {
            y[j] = y[j].clamp(-b[j], b[j]);
        }
        let moved = (&y - &x).amax();
        x = y;
        if moved <= opts.stationarity_tol * bscale {
            converged = true;
            break;
        }
    }
    let mut val = qp.objective(&x);
    // Vertex polish: jumping to the sign vertex of the current gradient
    // cannot decrease a convex objective, so accept only strict gains and
    // stop at the first fixed point.
    for _ in 0..MAX_POLISH_MOVES {
        let g = qp.apply_h(&x);
        let v = DVector::from_fn(dim, |j, _| {
            // Zero gradient components keep the current sign.
            if g[j] > 0.0 || (g[j] == 0.0 && x[j] >= 0.0) {
                b[j]
            } else {
                -b[j]
            }
        });
        if v == x {
            break;
        }
        let vval = qp.objective(&v);
        if vval > val {
            x = v;
            val = vval;
        } else if vval == val {
            x = v;
            break;
        } else {
            break;
        }
    }
    (x, val, iters, converged)
}

/// What a bound report measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundKind {
    /// Weighted L2 norm of the state error over the horizon.
    StateL2,
    /// Absolute error of the scalar quantity of interest.
    Qoi,
}

/// Extra evidence attached to a bound.
#[derive(Debug, Clone, Default)]
pub struct BoundDiagnostics {
    /// QP solver trace (state bounds only).
    pub qp: Option<QpDiagnostics>,
    /// Bound recomputed on the midpoint-refined grid (state bounds only).
    pub refined_value: Option<f64>,
    /// Relative change under grid refinement; small values indicate the
    /// discretization has converged.
    pub refinement_delta_rel: Option<f64>,
}

/// A worst-case bound with the deviation certificate that attains it in the
/// linearized model.
#[derive(Debug, Clone)]
pub struct BoundReport {
    pub kind: BoundKind,
    pub value: f64,
    /// Certificate controls: one vector per interval for state bounds, one
    /// per node for QoI bounds.
    pub certificate: Vec<DVector<f64>>,
    /// Worst-case state deviation reconstructed from the certificate.
    pub delta_x: Option<Trajectory>,
    pub diagnostics: BoundDiagnostics,
}

/// Worst-case weighted L2 state error over envelope-feasible deviations:
/// the square root of twice the QP maximum. Also reports the bound on a
/// midpoint-refined grid as a discretization check.
pub fn state_error_bound(
    lin: &LinearizedSystem,
    q: Option<&DMatrix<f64>>,
    eps_along: &[DVector<f64>],
    opts: &QpOptions,
) -> Result<BoundReport> {
    let qp = build_state_bound_qp(lin, q, eps_along)?;
    let sol = maximize_box_qp(&qp, opts)?;
    let value = (2.0 * sol.value.max(0.0)).sqrt();

    let cd = lin.component_dim();
    let n = lin.grid().intervals();
    let mut certificate = Vec::with_capacity(n);
    for j in 0..n {
        certificate.push(sol.maximizer.rows(j * cd, cd).into_owned());
    }

    let states = qp
        .propagate(&sol.maximizer)
        .expect("state bound QP is factored");
    let mut derivs = Vec::with_capacity(states.len());
    for i in 0..states.len() {
        let ctrl = &certificate[i.min(n - 1)];
        derivs.push(lin.a().value(i) * &states[i] + lin.b().value(i) * ctrl);
    }
    let delta_x = Trajectory::new(lin.grid().clone(), states, Some(derivs))?;

    let (refined_lin, refined_eps) = refine_midpoints(lin, eps_along)?;
    let refined_qp = build_state_bound_qp(&refined_lin, q, &refined_eps)?;
    let refined_sol = maximize_box_qp(&refined_qp, opts)?;
    let refined_value = (2.0 * refined_sol.value.max(0.0)).sqrt();
    let denom = value.abs().max(refined_value.abs());
    let delta_rel = if denom == 0.0 {
        0.0
    } else {
        (refined_value - value).abs() / denom
    };

    Ok(BoundReport {
        kind: BoundKind::StateL2,
        value,
        certificate,
        delta_x: Some(delta_x),
        diagnostics: BoundDiagnostics {
            qp: Some(sol.diagnostics),
            refined_value: Some(refined_value),
            refinement_delta_rel: Some(delta_rel),
        },
    })
}

/// Splits every interval at its midpoint, interpolating A, B, and the
/// envelope linearly onto the new nodes.
fn refine_midpoints(
    lin: &LinearizedSystem,
    eps_along: &[DVector<f64>],
) -> Result<(LinearizedSystem, Vec<DVector<f64>>)> {
    let nodes = lin.grid().nodes();
    let n = nodes.len();
    let mut new_nodes = Vec::with_capacity(2 * n - 1);
    let mut a_vals = Vec::with_capacity(2 * n - 1);
    let mut b_vals = Vec::with_capacity(2 * n - 1);
    let mut eps = Vec::with_capacity(2 * n - 1);
    for i in 0..n {
        new_nodes.push(nodes[i]);
        a_vals.push(lin.a().value(i).clone());
        b_vals.push(lin.b().value(i).clone());
        eps.push(eps_along[i].clone());
        if i + 1 < n {
            new_nodes.push(0.5 * (nodes[i] + nodes[i + 1]));
            a_vals.push(0.5 * (lin.a().value(i) + lin.a().value(i + 1)));
            b_vals.push(0.5 * (lin.b().value(i) + lin.b().value(i + 1)));
            eps.push(0.5 * (&eps_along[i] + &eps_along[i + 1]));
        }
    }
    let grid = TimeGrid::from_nodes(new_nodes)?;
    let a = MatrixSignal::new(grid.clone(), a_vals)?;
    let b = MatrixSignal::new(grid, b_vals)?;
    Ok((LinearizedSystem::new(a, b)?, eps))
}

/// Worst-case first-order QoI error over envelope-feasible deviations. The
/// maximum of the linear functional over the box is attained coordinatewise,
/// giving the closed form `integral of sum_c |w_c(t)| eps_c(t) dt` with the
/// sign certificate `d_c = eps_c sign(w_c)`; ties take the positive bound.
pub fn qoi_error_bound(
    adjoint: &AdjointResult,
    lin: &LinearizedSystem,
    qoi: &dyn QoiModel,
    traj: &Trajectory,
    component: &dyn ComponentModel,
    eps_along: &[DVector<f64>],
) -> Result<BoundReport> {
    let grid = lin.grid();
    validate_envelope_samples(grid, lin.component_dim(), eps_along)?;
    if adjoint.lambda.grid() != grid || traj.grid() != grid {
        return Err(OdeSensError::Validation(
            "QoI bound needs adjoint, trajectory, and linearization on one grid".into(),
        ));
    }
    let w = qoi_weight_samples(adjoint, lin, qoi, traj, component)?;
    let mut integrand = Vec::with_capacity(grid.len());
    let mut certificate = Vec::with_capacity(grid.len());
    for i in 0..grid.len() {
        let mut s = 0.0;
        let cert = DVector::from_fn(lin.component_dim(), |c, _| {
            s += w[i][c].abs() * eps_along[i][c];
            if w[i][c] < 0.0 {
                -eps_along[i][c]
            } else {
                eps_along[i][c]
            }
        });
        integrand.push(s);
        certificate.push(cert);
    }
    let value = quadrature(grid, &integrand)?;
    Ok(BoundReport {
        kind: BoundKind::Qoi,
        value,
        certificate,
        delta_x: None,
        diagnostics: BoundDiagnostics::default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use nalgebra::{DMatrix, DVector};

    use crate::integrate::solve_linear_forward;
    use crate::model::{ComponentModel, DynamicsModel, QoiModel};
    use crate::sensitivity::{
        qoi_directional_derivative, solve_adjoint, solve_sensitivity, state_error_norm,
    };

    fn scalar_system(n: usize, a: f64, b: f64) -> LinearizedSystem {
        let grid = TimeGrid::uniform(0.0, 1.0, n).unwrap();
        let a_sig = MatrixSignal::constant(grid.clone(), DMatrix::from_element(1, 1, a));
        let b_sig = MatrixSignal::constant(grid, DMatrix::from_element(1, 1, b));
        LinearizedSystem::new(a_sig, b_sig).unwrap()
    }

    fn unit_envelope(lin: &LinearizedSystem, eps: f64) -> Vec<DVector<f64>> {
        vec![DVector::from_element(lin.component_dim(), eps); lin.grid().len()]
    }

    /// Small time-varying two-state, two-control instance for vertex tests.
    fn wavy_system(n: usize) -> LinearizedSystem {
        let grid = TimeGrid::uniform(0.0, 1.0, n).unwrap();
        let mut a_vals = Vec::with_capacity(grid.len());
        let mut b_vals = Vec::with_capacity(grid.len());
        for &t in grid.nodes() {
            a_vals.push(DMatrix::from_row_slice(
                2,
                2,
                &[0.3 * t.sin(), -0.8, 0.5, -0.2 * t.cos()],
            ));
            b_vals.push(DMatrix::from_row_slice(
                2,
                2,
                &[1.0, 0.4 * t, -0.3, 0.7 + 0.2 * t.sin()],
            ));
        }
        let a = MatrixSignal::new(grid.clone(), a_vals).unwrap();
        let b = MatrixSignal::new(grid, b_vals).unwrap();
        LinearizedSystem::new(a, b).unwrap()
    }

    fn wavy_envelope(lin: &LinearizedSystem) -> Vec<DVector<f64>> {
        lin.grid()
            .nodes()
            .iter()
            .map(|&t| DVector::from_vec(vec![0.3 + 0.1 * (3.0 * t).sin(), 0.2 + 0.05 * t]))
            .collect()
    }

    #[test]
    fn dense_diagonal_instance_is_solved_exactly() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 4.0]);
        let qp = CondensedBoxQP::from_dense(h, vec![1.0, 1.0]).unwrap();
        let sol = maximize_box_qp(&qp, &QpOptions::default()).unwrap();
        assert_eq!(sol.value, 2.5);
        assert!(sol.diagnostics.exhaustive);
        assert_eq!(sol.maximizer.map(f64::abs), DVector::from_element(2, 1.0));
    }

    #[test]
    fn dense_coupled_instance_prefers_aligned_signs() {
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let qp = CondensedBoxQP::from_dense(h, vec![1.0, 1.0]).unwrap();
        let sol = maximize_box_qp(&qp, &QpOptions::default()).unwrap();
        assert_eq!(sol.value, 3.0);
        assert_eq!(sol.maximizer[0], sol.maximizer[1]);
    }

    #[test]
    fn zero_matrix_returns_zero_at_a_vertex() {
        let qp = CondensedBoxQP::from_dense(DMatrix::zeros(3, 3), vec![1.0, 2.0, 0.5]).unwrap();
        let sol = maximize_box_qp(&qp, &QpOptions::default()).unwrap();
        assert_eq!(sol.value, 0.0);
        for j in 0..3 {
            assert_eq!(sol.maximizer[j].abs(), qp.bounds()[j]);
        }
    }

    #[test]
    fn from_dense_rejects_bad_inputs() {
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(CondensedBoxQP::from_dense(asym, vec![1.0, 1.0]).is_err());
        let ok = DMatrix::identity(2, 2);
        assert!(CondensedBoxQP::from_dense(ok.clone(), vec![1.0]).is_err());
        assert!(CondensedBoxQP::from_dense(ok, vec![1.0, -1.0]).is_err());
    }

    #[test]
    fn zero_envelope_gives_zero_bound() {
        let lin = scalar_system(50, 0.0, 1.0);
        let eps = unit_envelope(&lin, 0.0);
        let report = state_error_bound(&lin, None, &eps, &QpOptions::default()).unwrap();
        assert_eq!(report.value, 0.0);
    }

    #[test]
    fn zero_sensitivity_gives_zero_bound() {
        let lin = scalar_system(50, -1.0, 0.0);
        let eps = unit_envelope(&lin, 1.0);
        let report = state_error_bound(&lin, None, &eps, &QpOptions::default()).unwrap();
        assert_eq!(report.value, 0.0);
    }

    #[test]
    fn scalar_integrator_instance_matches_closed_form() {
        // x' = d with |d| <= 1 on [0,1]: worst case x(t) = t, so the QP value
        // is 1/6 and the bound is 1/sqrt(3).
        let lin = scalar_system(1000, 0.0, 1.0);
        let eps = unit_envelope(&lin, 1.0);
        let qp = build_state_bound_qp(&lin, None, &eps).unwrap();
        let sol = maximize_box_qp(&qp, &QpOptions::default()).unwrap();
        assert!(!sol.diagnostics.exhaustive);
        assert_relative_eq!(sol.value, 1.0 / 6.0, max_relative = 1e-2);
        for j in 0..qp.dim() {
            assert_eq!(sol.maximizer[j], 1.0);
        }
        let report = state_error_bound(&lin, None, &eps, &QpOptions::default()).unwrap();
        assert_relative_eq!(report.value, 0.5773502691896258, max_relative = 1e-2);
        let diag = report.diagnostics;
        assert!(diag.refinement_delta_rel.unwrap() < 1e-2);
    }

    #[test]
    fn objective_is_sign_symmetric() {
        let lin = wavy_system(20);
        let eps = wavy_envelope(&lin);
        let qp = build_state_bound_qp(&lin, None, &eps).unwrap();
        let sol = maximize_box_qp(&qp, &QpOptions::default()).unwrap();
        let flipped = -&sol.maximizer;
        assert_eq!(qp.objective(&sol.maximizer), qp.objective(&flipped));
    }

    #[test]
    fn solver_matches_exhaustive_enumeration_on_small_instances() {
        // 5 intervals x 2 controls = 10 coordinates, within the exact window.
        let lin = wavy_system(5);
        let eps = wavy_envelope(&lin);
        let qp = build_state_bound_qp(&lin, None, &eps).unwrap();
        let sol = maximize_box_qp(&qp, &QpOptions::default()).unwrap();
        assert!(sol.diagnostics.exhaustive);

        // Independent enumeration over all sign assignments.
        let dim = qp.dim();
        let mut best = f64::NEG_INFINITY;
        for mask in 0u32..(1 << dim) {
            let d = DVector::from_fn(dim, |j, _| {
                if mask & (1 << j) != 0 {
                    qp.bounds()[j]
                } else {
                    -qp.bounds()[j]
                }
            });
            best = best.max(qp.objective(&d));
        }
        assert_eq!(sol.value, best);
        assert_eq!(qp.objective(&sol.maximizer), best);
    }

    #[test]
    fn gradient_path_reaches_near_optimal_values() {
        let lin = wavy_system(5);
        let eps = wavy_envelope(&lin);
        let qp = build_state_bound_qp(&lin, None, &eps).unwrap();
        let exact = maximize_box_qp(&qp, &QpOptions::default()).unwrap();
        let forced = QpOptions {
            exhaustive_limit: 0,
            ..QpOptions::default()
        };
        let sol = maximize_box_qp(&qp, &forced).unwrap();
        assert!(!sol.diagnostics.exhaustive);
        assert!(sol.value <= exact.value * (1.0 + 1e-12));
        assert!(sol.value >= 0.99 * exact.value);
    }

    #[test]
    fn doubling_the_envelope_doubles_the_bound_exactly() {
        // Exhaustive path.
        let lin = wavy_system(5);
        let eps = wavy_envelope(&lin);
        let eps2: Vec<DVector<f64>> = eps.iter().map(|e| 2.0 * e).collect();
        let r1 = state_error_bound(&lin, None, &eps, &QpOptions::default()).unwrap();
        let r2 = state_error_bound(&lin, None, &eps2, &QpOptions::default()).unwrap();
        assert_eq!(r2.value, 2.0 * r1.value);

        // Gradient path: every iterate scales with the box, so the result is
        // exact there as well.
        let lin = scalar_system(100, 0.4, 1.0);
        let eps = unit_envelope(&lin, 0.25);
        let eps2: Vec<DVector<f64>> = eps.iter().map(|e| 2.0 * e).collect();
        let r1 = state_error_bound(&lin, None, &eps, &QpOptions::default()).unwrap();
        let r2 = state_error_bound(&lin, None, &eps2, &QpOptions::default()).unwrap();
        assert_eq!(r2.value, 2.0 * r1.value);
    }

    #[test]
    fn certificate_is_feasible_and_consistent_with_the_value() {
        let lin = wavy_system(30);
        let eps = wavy_envelope(&lin);
        let report = state_error_bound(&lin, None, &eps, &QpOptions::default()).unwrap();
        for (j, c) in report.certificate.iter().enumerate() {
            for k in 0..c.len() {
                assert!(c[k].abs() <= eps[j][k] + 1e-15);
            }
        }
        // The reconstructed worst-case deviation reproduces the bound value.
        let delta = report.delta_x.as_ref().unwrap();
        let norm = state_error_norm(delta, None).unwrap();
        assert_relative_eq!(norm, report.value, max_relative = 1e-6);
    }

    #[test]
    fn sampled_feasible_directions_never_exceed_the_state_bound() {
        use rand::Rng;
        use rand::SeedableRng;
        let lin = scalar_system(100, 0.0, 1.0);
        let eps = unit_envelope(&lin, 1.0);
        let report = state_error_bound(&lin, None, &eps, &QpOptions::default()).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let dg: Vec<DVector<f64>> = (0..lin.grid().len())
                .map(|_| DVector::from_vec(vec![rng.random_range(-1.0..=1.0)]))
                .collect();
            let sens = solve_sensitivity(&lin, &dg).unwrap();
            let norm = state_error_norm(&sens.delta_x, None).unwrap();
            assert!(norm <= report.value * (1.0 + 1e-6));
        }
    }

    #[test]
    fn condensed_dynamics_match_the_linear_solver() {
        // A constant control pushed through the QP's transition matrices must
        // reproduce the RK4 linear solve with the matching forcing.
        let lin = wavy_system(12);
        let eps = wavy_envelope(&lin);
        let qp = build_state_bound_qp(&lin, None, &eps).unwrap();
        let ctrl = DVector::from_vec(vec![0.2, -0.1]);
        let mut d = DVector::zeros(qp.dim());
        for j in 0..lin.grid().intervals() {
            d.rows_mut(j * 2, 2).copy_from(&ctrl);
        }
        let states = qp.propagate(&d).unwrap();
        let b = lin.b().clone();
        let forcing = move |t: f64| b.value_at(t).unwrap() * &ctrl;
        let reference = solve_linear_forward(lin.a(), forcing, &DVector::zeros(2)).unwrap();
        for (i, state) in states.iter().enumerate() {
            let diff = (state - reference.state(i)).amax();
            assert!(diff <= 1e-9, "node {i} differs by {diff}");
        }
    }

    struct PassThroughDynamics;

    impl DynamicsModel for PassThroughDynamics {
        fn state_dim(&self) -> usize {
            1
        }
        fn component_dim(&self) -> usize {
            1
        }
        fn eval(&self, _t: f64, _x: &DVector<f64>, g: &DVector<f64>) -> DVector<f64> {
            g.clone()
        }
        fn jacobian_x(&self, _t: f64, _x: &DVector<f64>, _g: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::zeros(1, 1)
        }
        fn jacobian_g(&self, _t: f64, _x: &DVector<f64>, _g: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::from_element(1, 1, 1.0)
        }
    }

    struct ZeroComponent;

    impl ComponentModel for ZeroComponent {
        fn state_dim(&self) -> usize {
            1
        }
        fn output_dim(&self) -> usize {
            1
        }
        fn eval(&self, _t: f64, _x: &DVector<f64>) -> DVector<f64> {
            DVector::zeros(1)
        }
        fn jacobian_x(&self, _t: f64, _x: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::zeros(1, 1)
        }
    }

    /// QoI whose adjoint weight is w(t) = t - 1/2 on the pass-through system.
    struct RampWeightQoi;

    impl QoiModel for RampWeightQoi {
        fn state_dim(&self) -> usize {
            1
        }
        fn component_dim(&self) -> usize {
            1
        }
        fn terminal(&self, x: &DVector<f64>) -> f64 {
            0.5 * x[0]
        }
        fn terminal_gradient(&self, _x: &DVector<f64>) -> DVector<f64> {
            DVector::from_element(1, 0.5)
        }
        fn running(&self, _t: f64, x: &DVector<f64>, _g: &DVector<f64>) -> f64 {
            -x[0]
        }
        fn running_gradient_x(&self, _t: f64, _x: &DVector<f64>, _g: &DVector<f64>) -> DVector<f64> {
            DVector::from_element(1, -1.0)
        }
        fn running_gradient_g(&self, _t: f64, _x: &DVector<f64>, _g: &DVector<f64>) -> DVector<f64> {
            DVector::zeros(1)
        }
    }

    /// QoI identically zero; its adjoint weight vanishes, exposing the tie
    /// rule in the certificate.
    struct ZeroQoi;

    impl QoiModel for ZeroQoi {
        fn state_dim(&self) -> usize {
            1
        }
        fn component_dim(&self) -> usize {
            1
        }
        fn terminal(&self, _x: &DVector<f64>) -> f64 {
            0.0
        }
        fn terminal_gradient(&self, _x: &DVector<f64>) -> DVector<f64> {
            DVector::zeros(1)
        }
        fn running(&self, _t: f64, _x: &DVector<f64>, _g: &DVector<f64>) -> f64 {
            0.0
        }
        fn running_gradient_x(&self, _t: f64, _x: &DVector<f64>, _g: &DVector<f64>) -> DVector<f64> {
            DVector::zeros(1)
        }
        fn running_gradient_g(&self, _t: f64, _x: &DVector<f64>, _g: &DVector<f64>) -> DVector<f64> {
            DVector::zeros(1)
        }
    }

    fn ramp_weight_setup(
        n: usize,
    ) -> (
        LinearizedSystem,
        Trajectory,
        AdjointResult,
    ) {
        let grid = TimeGrid::uniform(0.0, 1.0, n).unwrap();
        let states = vec![DVector::zeros(1); grid.len()];
        let derivs = vec![DVector::zeros(1); grid.len()];
        let traj = Trajectory::new(grid.clone(), states, Some(derivs)).unwrap();
        let lin = crate::model::linearize(&PassThroughDynamics, &ZeroComponent, &traj).unwrap();
        let adj = solve_adjoint(&lin, &RampWeightQoi, &traj, &ZeroComponent).unwrap();
        (lin, traj, adj)
    }

    #[test]
    fn ramp_weight_bound_integrates_absolute_weight() {
        // lambda' = 1 with lambda(1) = 1/2 gives w(t) = t - 1/2, and the
        // bound equals the integral of |t - 1/2| = 1/4 for a unit envelope.
        let (lin, traj, adj) = ramp_weight_setup(1000);
        assert_abs_diff_eq!(adj.lambda.state(0)[0], -0.5, epsilon = 1e-12);
        let eps = unit_envelope(&lin, 1.0);
        let report =
            qoi_error_bound(&adj, &lin, &RampWeightQoi, &traj, &ZeroComponent, &eps).unwrap();
        assert_eq!(report.kind, BoundKind::Qoi);
        assert_abs_diff_eq!(report.value, 0.25, epsilon = 1e-6);
        assert_eq!(report.certificate[0][0], -1.0);
        assert_eq!(report.certificate.last().unwrap()[0], 1.0);
        // The certificate attains the bound through the adjoint functional.
        let cert = report.certificate.clone();
        let attained =
            qoi_directional_derivative(&adj, &lin, &RampWeightQoi, &traj, &ZeroComponent, &cert)
                .unwrap();
        assert_abs_diff_eq!(attained, report.value, epsilon = 1e-12);
    }

    #[test]
    fn sampled_feasible_directions_never_exceed_the_qoi_bound() {
        use rand::Rng;
        use rand::SeedableRng;
        let (lin, traj, adj) = ramp_weight_setup(400);
        let eps = unit_envelope(&lin, 0.5);
        let report =
            qoi_error_bound(&adj, &lin, &RampWeightQoi, &traj, &ZeroComponent, &eps).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let dg: Vec<DVector<f64>> = (0..lin.grid().len())
                .map(|_| DVector::from_vec(vec![rng.random_range(-0.5..=0.5)]))
                .collect();
            let est =
                qoi_directional_derivative(&adj, &lin, &RampWeightQoi, &traj, &ZeroComponent, &dg)
                    .unwrap();
            assert!(est.abs() <= report.value * (1.0 + 1e-9));
        }
    }

    #[test]
    fn zero_weight_certificate_takes_the_positive_tie() {
        let grid = TimeGrid::uniform(0.0, 1.0, 10).unwrap();
        let states = vec![DVector::zeros(1); grid.len()];
        let derivs = vec![DVector::zeros(1); grid.len()];
        let traj = Trajectory::new(grid.clone(), states, Some(derivs)).unwrap();
        let lin = crate::model::linearize(&PassThroughDynamics, &ZeroComponent, &traj).unwrap();
        let adj = solve_adjoint(&lin, &ZeroQoi, &traj, &ZeroComponent).unwrap();
        let eps = unit_envelope(&lin, 0.7);
        let report = qoi_error_bound(&adj, &lin, &ZeroQoi, &traj, &ZeroComponent, &eps).unwrap();
        assert_eq!(report.value, 0.0);
        for c in &report.certificate {
            assert_eq!(c[0], 0.7);
        }
    }

    #[test]
    fn envelope_validation_rejects_bad_samples() {
        let lin = scalar_system(10, 0.0, 1.0);
        let short = vec![DVector::from_element(1, 1.0); lin.grid().len() - 1];
        assert!(build_state_bound_qp(&lin, None, &short).is_err());
        let negative = vec![DVector::from_element(1, -1.0); lin.grid().len()];
        assert!(build_state_bound_qp(&lin, None, &negative).is_err());
        let wrong_dim = DMatrix::identity(2, 2);
        assert!(build_state_bound_qp(&lin, Some(&wrong_dim), &unit_envelope(&lin, 1.0)).is_err());

        let wavy = wavy_system(4);
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(build_state_bound_qp(&wavy, Some(&asym), &wavy_envelope(&wavy)).is_err());
        let spd = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        assert!(build_state_bound_qp(&wavy, Some(&spd), &wavy_envelope(&wavy)).is_ok());
    }
}
