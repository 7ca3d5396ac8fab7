//! Initial value problem integrators and linear time-varying solvers.
//!
//! Two steppers are provided: classical fourth-order Runge-Kutta on a fixed
//! user grid, and an adaptive Dormand-Prince 5(4) pair with proportional step
//! control. Linear systems reuse the fixed-grid RK4 stepper with matrix and
//! forcing samples interpolated between nodes, so the discrete transition of
//! `solve_linear_forward` is exactly one RK4 step per grid interval.

use crate::error::{OdeSensError, Result};
use crate::grid::TimeGrid;
use crate::trajectory::{MatrixSignal, Trajectory};
use nalgebra::DVector;

/// Fixed-grid stepping method.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Classical fourth-order Runge-Kutta.
    Rk4,
    /// Dormand-Prince 5(4) fifth-order solution without error control.
    Dopri5,
}

/// Adaptive integration settings.
///
/// Defaults: `rtol = 1e-8`, `atol = 1e-10`.
#[derive(Debug, Clone, Copy)]
pub struct AdaptiveOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Hard cap on accepted plus rejected steps.
    pub max_steps: usize,
}

impl Default for AdaptiveOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            atol: 1e-10,
            max_steps: 10_000_000,
        }
    }
}

/// Grid specification for [`integrate_ivp`].
#[derive(Debug, Clone)]
pub enum GridSpec {
    /// One step of `method` per interval of `grid`.
    Fixed { grid: TimeGrid, method: Method },
    /// Adaptive Dormand-Prince 5(4) over `[t0, tf]`; the output grid is the
    /// sequence of accepted step endpoints.
    Adaptive {
        t0: f64,
        tf: f64,
        opts: AdaptiveOptions,
    },
}

impl GridSpec {
    /// Fixed RK4 grid, the default fixed-step choice.
    pub fn fixed(grid: TimeGrid) -> Self {
        GridSpec::Fixed {
            grid,
            method: Method::Rk4,
        }
    }

    pub fn adaptive(t0: f64, tf: f64, rtol: f64, atol: f64) -> Self {
        GridSpec::Adaptive {
            t0,
            tf,
            opts: AdaptiveOptions {
                rtol,
                atol,
                ..AdaptiveOptions::default()
            },
        }
    }

    pub fn adaptive_default(t0: f64, tf: f64) -> Self {
        GridSpec::Adaptive {
            t0,
            tf,
            opts: AdaptiveOptions::default(),
        }
    }
}

fn check_finite(v: &DVector<f64>, what: &str, t: f64) -> Result<()> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(OdeSensError::NonFinite {
            what: what.into(),
            t,
        });
    }
    Ok(())
}

/// Integrates `x' = rhs(t, x)` from `x0`, returning states and derivative
/// samples on the realized grid.
pub fn integrate_ivp<F>(rhs: F, x0: &DVector<f64>, spec: &GridSpec) -> Result<Trajectory>
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
{
    check_finite(x0, "initial state", f64::NAN)?;
    match spec {
        GridSpec::Fixed { grid, method } => integrate_fixed(&rhs, x0, grid, *method),
        GridSpec::Adaptive { t0, tf, opts } => integrate_adaptive(&rhs, x0, *t0, *tf, opts),
    }
}

fn integrate_fixed<F>(
    rhs: &F,
    x0: &DVector<f64>,
    grid: &TimeGrid,
    method: Method,
) -> Result<Trajectory>
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
{
    let n = grid.len();
    let mut states = Vec::with_capacity(n);
    let mut derivs = Vec::with_capacity(n);
    let mut x = x0.clone();
    let mut k1 = rhs(grid.t0(), &x);
    check_finite(&k1, "rhs", grid.t0())?;
    states.push(x.clone());
    derivs.push(k1.clone());
    for i in 0..grid.intervals() {
        let t = grid.nodes()[i];
        let h = grid.nodes()[i + 1] - t;
        x = match method {
            Method::Rk4 => rk4_step(rhs, t, &x, &k1, h)?,
            Method::Dopri5 => dopri5_step(rhs, t, &x, &k1, h)?.0,
        };
        let t_next = grid.nodes()[i + 1];
        check_finite(&x, "state", t_next)?;
        k1 = rhs(t_next, &x);
        check_finite(&k1, "rhs", t_next)?;
        states.push(x.clone());
        derivs.push(k1.clone());
    }
    Trajectory::new(grid.clone(), states, Some(derivs))
}

fn rk4_step<F>(rhs: &F, t: f64, x: &DVector<f64>, k1: &DVector<f64>, h: f64) -> Result<DVector<f64>>
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
{
    let half = 0.5 * h;
    let k2 = rhs(t + half, &(x + k1 * half));
    check_finite(&k2, "rhs", t + half)?;
    let k3 = rhs(t + half, &(x + &k2 * half));
    check_finite(&k3, "rhs", t + half)?;
    let k4 = rhs(t + h, &(x + &k3 * h));
    check_finite(&k4, "rhs", t + h)?;
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

// Dormand-Prince 5(4) tableau.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// Difference between the 5th- and 4th-order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// One DP54 step; returns the fifth-order solution and the embedded error estimate.
fn dopri5_step<F>(
    rhs: &F,
    t: f64,
    x: &DVector<f64>,
    k1: &DVector<f64>,
    h: f64,
) -> Result<(DVector<f64>, DVector<f64>)>
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
{
    let k2 = rhs(t + h / 5.0, &(x + k1 * (A21 * h)));
    check_finite(&k2, "rhs", t + h / 5.0)?;
    let k3 = rhs(t + 3.0 * h / 10.0, &(x + k1 * (A31 * h) + &k2 * (A32 * h)));
    check_finite(&k3, "rhs", t + 3.0 * h / 10.0)?;
    let k4 = rhs(
        t + 4.0 * h / 5.0,
        &(x + k1 * (A41 * h) + &k2 * (A42 * h) + &k3 * (A43 * h)),
    );
    check_finite(&k4, "rhs", t + 4.0 * h / 5.0)?;
    let k5 = rhs(
        t + 8.0 * h / 9.0,
        &(x + k1 * (A51 * h) + &k2 * (A52 * h) + &k3 * (A53 * h) + &k4 * (A54 * h)),
    );
    check_finite(&k5, "rhs", t + 8.0 * h / 9.0)?;
    let k6 = rhs(
        t + h,
        &(x + k1 * (A61 * h)
            + &k2 * (A62 * h)
            + &k3 * (A63 * h)
            + &k4 * (A64 * h)
            + &k5 * (A65 * h)),
    );
    check_finite(&k6, "rhs", t + h)?;
    let x_new = x + k1 * (B1 * h) + &k3 * (B3 * h) + &k4 * (B4 * h) + &k5 * (B5 * h) + &k6 * (B6 * h);
    let k7 = rhs(t + h, &x_new);
    check_finite(&k7, "rhs", t + h)?;
    let err = k1 * (E1 * h)
        + &k3 * (E3 * h)
        + &k4 * (E4 * h)
        + &k5 * (E5 * h)
        + &k6 * (E6 * h)
        + &k7 * (E7 * h);
    Ok((x_new, err))
}

fn integrate_adaptive<F>(
    rhs: &F,
    x0: &DVector<f64>,
    t0: f64,
    tf: f64,
    opts: &AdaptiveOptions,
) -> Result<Trajectory>
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
{
    if !(tf > t0) || !t0.is_finite() || !tf.is_finite() {
        return Err(OdeSensError::InvalidGrid(format!(
            "adaptive span needs tf > t0, got [{t0}, {tf}]"
        )));
    }
    if !(opts.rtol > 0.0) || !(opts.atol > 0.0) {
        return Err(OdeSensError::Validation(format!(
            "adaptive tolerances must be positive, got rtol = {}, atol = {}",
            opts.rtol, opts.atol
        )));
    }
    let span = tf - t0;
    let n_dim = x0.len() as f64;
    let mut t = t0;
    let mut x = x0.clone();
    let mut k1 = rhs(t, &x);
    check_finite(&k1, "rhs", t)?;

    let mut nodes = vec![t0];
    let mut states = vec![x.clone()];
    let mut derivs = vec![k1.clone()];

    let mut h = (span * 1e-3).min(span);
    let h_min_floor = span * 1e-14;
    let mut steps = 0usize;
    while t < tf {
        if steps >= opts.max_steps {
            return Err(OdeSensError::StepSizeUnderflow { t });
        }
        steps += 1;
        h = h.min(tf - t);
        let (x_new, err) = dopri5_step(rhs, t, &x, &k1, h)?;
        check_finite(&x_new, "state", t + h)?;
        // Scaled RMS error against a mixed absolute/relative tolerance.
        let mut acc = 0.0;
        for i in 0..x.len() {
            let sc = opts.atol + opts.rtol * x[i].abs().max(x_new[i].abs());
            let r = err[i] / sc;
            acc += r * r;
        }
        let err_norm = (acc / n_dim).sqrt();
        if err_norm <= 1.0 {
            t += h;
            x = x_new;
            k1 = rhs(t, &x);
            check_finite(&k1, "rhs", t)?;
            nodes.push(t);
            states.push(x.clone());
            derivs.push(k1.clone());
            let factor = if err_norm == 0.0 {
                5.0
            } else {
                (0.9 * err_norm.powf(-0.2)).clamp(0.2, 5.0)
            };
            h *= factor;
        } else {
            h *= (0.9 * err_norm.powf(-0.2)).clamp(0.2, 1.0);
            if h < h_min_floor {
                return Err(OdeSensError::StepSizeUnderflow { t });
            }
        }
    }
    // Guard against an accepted step landing within roundoff of tf.
    let n = nodes.len();
    if n >= 2 && nodes[n - 1] - nodes[n - 2] <= h_min_floor {
        nodes.remove(n - 2);
        states.remove(n - 2);
        derivs.remove(n - 2);
    }
    *nodes.last_mut().unwrap() = tf;
    let grid = TimeGrid::from_nodes(nodes)?;
    Trajectory::new(grid, states, Some(derivs))
}

/// Solves `v' = A(t) v + forcing(t)` on the grid of `a`, one RK4 step per
/// interval, with `A` interpolated linearly between its node samples.
pub fn solve_linear_forward<F>(a: &MatrixSignal, forcing: F, v0: &DVector<f64>) -> Result<Trajectory>
where
    F: Fn(f64) -> DVector<f64>,
{
    let (rows, cols) = a.shape();
    if rows != cols {
        return Err(OdeSensError::DimensionMismatch {
            context: "solve_linear_forward".into(),
            expected: "square matrix signal".into(),
            actual: format!("{rows}x{cols}"),
        });
    }
    if v0.len() != rows {
        return Err(OdeSensError::DimensionMismatch {
            context: "solve_linear_forward".into(),
            expected: format!("state of dimension {rows}"),
            actual: format!("{}", v0.len()),
        });
    }
    let rhs = move |t: f64, v: &DVector<f64>| {
        // Grid containment is guaranteed by the stepper's stage times.
        let at = a.value_at(t).expect("stage time inside signal span");
        at * v + forcing(t)
    };
    integrate_fixed(&rhs, v0, a.grid(), Method::Rk4)
}

/// Solves the terminal value problem `-w' = A(t)^T w + forcing(t)` with
/// `w(tf) = v_f`, by the time-reversal substitution `s = t0 + tf - t`, which
/// turns it into a forward system solved with the same RK4 stepper.
pub fn solve_linear_backward<F>(
    a: &MatrixSignal,
    forcing: F,
    v_f: &DVector<f64>,
) -> Result<Trajectory>
where
    F: Fn(f64) -> DVector<f64>,
{
    let (rows, cols) = a.shape();
    if rows != cols {
        return Err(OdeSensError::DimensionMismatch {
            context: "solve_linear_backward".into(),
            expected: "square matrix signal".into(),
            actual: format!("{rows}x{cols}"),
        });
    }
    if v_f.len() != rows {
        return Err(OdeSensError::DimensionMismatch {
            context: "solve_linear_backward".into(),
            expected: format!("state of dimension {rows}"),
            actual: format!("{}", v_f.len()),
        });
    }
    let grid = a.grid();
    let (t0, tf) = (grid.t0(), grid.tf());
    // Reflected grid: s_i = t0 + tf - t_{n-1-i}, still strictly increasing.
    let mut reflected: Vec<f64> = grid.nodes().iter().rev().map(|&t| t0 + tf - t).collect();
    reflected[0] = t0;
    let m = reflected.len();
    reflected[m - 1] = tf;
    let reflected_values: Vec<_> = a.values().iter().rev().map(|mat| mat.transpose()).collect();
    let reflected_a = MatrixSignal::new(TimeGrid::from_nodes(reflected)?, reflected_values)?;
    let reflected_forcing = move |s: f64| forcing(t0 + tf - s);
    let w = solve_linear_forward(&reflected_a, reflected_forcing, v_f)?;
    // Undo the reflection; derivatives flip sign because ds = -dt.
    let states = w.states().iter().rev().cloned().collect();
    let derivs = w
        .derivs()
        .map(|d| d.iter().rev().map(|v| -v).collect::<Vec<_>>());
    Trajectory::new(grid.clone(), states, derivs)
}
