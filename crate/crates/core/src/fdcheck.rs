//! Finite-difference validation of analytic model derivatives.
//!
//! Central differences with a configurable step are compared entrywise
//! against the analytic Jacobians and gradients. Relative errors use a
//! denominator floored at 1 so tiny entries do not inflate the report.

use crate::error::{OdeSensError, Result};
use crate::model::{ComponentModel, DynamicsModel, QoiModel};
use nalgebra::{DMatrix, DVector};

/// Default central-difference step.
pub const DEFAULT_FD_STEP: f64 = 1e-6;

/// Worst relative mismatch for one partial derivative block.
#[derive(Debug, Clone)]
pub struct PartialCheck {
    /// Name of the derivative block, e.g. "f_x" or "terminal_gradient".
    pub partial: String,
    pub max_rel_err: f64,
    /// Index of the probe point where the worst mismatch occurred.
    pub worst_probe: usize,
}

/// Derivative validation report across probe points.
#[derive(Debug, Clone)]
pub struct DerivativeReport {
    pub checks: Vec<PartialCheck>,
}

impl DerivativeReport {
    /// Largest relative mismatch across all blocks.
    pub fn max_rel_err(&self) -> f64 {
        self.checks
            .iter()
            .map(|c| c.max_rel_err)
            .fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err() <= tol
    }
}

fn rel_err(fd: f64, analytic: f64) -> f64 {
    (fd - analytic).abs() / analytic.abs().max(1.0)
}

fn update(block: &mut PartialCheck, probe: usize, err: f64) {
    if err > block.max_rel_err {
        block.max_rel_err = err;
        block.worst_probe = probe;
    }
}

fn block(name: &str) -> PartialCheck {
    PartialCheck {
        partial: name.into(),
        max_rel_err: 0.0,
        worst_probe: 0,
    }
}

fn central_jacobian<F>(eval: F, at: &DVector<f64>, h: f64, out_dim: usize) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = at.len();
    let mut jac = DMatrix::zeros(out_dim, n);
    let mut probe = at.clone();
    for j in 0..n {
        probe[j] = at[j] + h;
        let plus = eval(&probe);
        probe[j] = at[j] - h;
        let minus = eval(&probe);
        probe[j] = at[j];
        for i in 0..out_dim {
            jac[(i, j)] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
    jac
}

fn central_gradient<F>(eval: F, at: &DVector<f64>, h: f64) -> DVector<f64>
where
    F: Fn(&DVector<f64>) -> f64,
{
    let n = at.len();
    let mut grad = DVector::zeros(n);
    let mut probe = at.clone();
    for j in 0..n {
        probe[j] = at[j] + h;
        let plus = eval(&probe);
        probe[j] = at[j] - h;
        let minus = eval(&probe);
        probe[j] = at[j];
        grad[j] = (plus - minus) / (2.0 * h);
    }
    grad
}

fn worst_entry(fd: &DMatrix<f64>, analytic: &DMatrix<f64>) -> f64 {
    fd.iter()
        .zip(analytic.iter())
        .map(|(a, b)| rel_err(*a, *b))
        .fold(0.0, f64::max)
}

/// Validates `jacobian_x` and `jacobian_g` of a dynamics model at probe
/// points `(t, x, g)`.
pub fn check_dynamics_derivatives(
    dynamics: &dyn DynamicsModel,
    probes: &[(f64, DVector<f64>, DVector<f64>)],
    h: f64,
) -> Result<DerivativeReport> {
    if probes.is_empty() {
        return Err(OdeSensError::Validation(
            "derivative check needs at least one probe point".into(),
        ));
    }
    let mut fx = block("f_x");
    let mut fg = block("f_g");
    for (idx, (t, x, g)) in probes.iter().enumerate() {
        let fd_x = central_jacobian(
            |xp| dynamics.eval(*t, xp, g),
            x,
            h,
            dynamics.state_dim(),
        );
        update(&mut fx, idx, worst_entry(&fd_x, &dynamics.jacobian_x(*t, x, g)));
        let fd_g = central_jacobian(
            |gp| dynamics.eval(*t, x, gp),
            g,
            h,
            dynamics.state_dim(),
        );
        update(&mut fg, idx, worst_entry(&fd_g, &dynamics.jacobian_g(*t, x, g)));
    }
    Ok(DerivativeReport {
        checks: vec![fx, fg],
    })
}

/// Validates `jacobian_x` (and `hessian_x` when provided) of a component
/// model at probe points `(t, x)`.
pub fn check_component_derivatives(
    component: &dyn ComponentModel,
    probes: &[(f64, DVector<f64>)],
    h: f64,
) -> Result<DerivativeReport> {
    if probes.is_empty() {
        return Err(OdeSensError::Validation(
            "derivative check needs at least one probe point".into(),
        ));
    }
    let mut gx = block("g_x");
    let mut gxx: Option<PartialCheck> = None;
    for (idx, (t, x)) in probes.iter().enumerate() {
        let fd = central_jacobian(
            |xp| component.eval(*t, xp),
            x,
            h,
            component.output_dim(),
        );
        update(&mut gx, idx, worst_entry(&fd, &component.jacobian_x(*t, x)));
        if let Some(hess) = component.hessian_x(*t, x) {
            let entry = gxx.get_or_insert_with(|| block("g_xx"));
            for (c, hc) in hess.iter().enumerate() {
                let fd_h = central_jacobian(
                    |xp| component.jacobian_x(*t, xp).row(c).transpose(),
                    x,
                    h,
                    component.state_dim(),
                );
                update(entry, idx, worst_entry(&fd_h, hc));
            }
        }
    }
    let mut checks = vec![gx];
    checks.extend(gxx);
    Ok(DerivativeReport { checks })
}

/// Validates the terminal and running-cost gradients of a QoI model at probe
/// points `(t, x, g)`; the terminal gradient is checked at each probe's `x`.
pub fn check_qoi_derivatives(
    qoi: &dyn QoiModel,
    probes: &[(f64, DVector<f64>, DVector<f64>)],
    h: f64,
) -> Result<DerivativeReport> {
    if probes.is_empty() {
        return Err(OdeSensError::Validation(
            "derivative check needs at least one probe point".into(),
        ));
    }
    let mut term = block("terminal_gradient");
    let mut lx = block("running_gradient_x");
    let mut lg = block("running_gradient_g");
    for (idx, (t, x, g)) in probes.iter().enumerate() {
        let fd_t = central_gradient(|xp| qoi.terminal(xp), x, h);
        let an_t = qoi.terminal_gradient(x);
        update(
            &mut term,
            idx,
            fd_t.iter()
                .zip(an_t.iter())
                .map(|(a, b)| rel_err(*a, *b))
                .fold(0.0, f64::max),
        );
        let fd_x = central_gradient(|xp| qoi.running(*t, xp, g), x, h);
        let an_x = qoi.running_gradient_x(*t, x, g);
        update(
            &mut lx,
            idx,
            fd_x.iter()
                .zip(an_x.iter())
                .map(|(a, b)| rel_err(*a, *b))
                .fold(0.0, f64::max),
        );
        let fd_g = central_gradient(|gp| qoi.running(*t, x, gp), g, h);
        let an_g = qoi.running_gradient_g(*t, x, g);
        update(
            &mut lg,
            idx,
            fd_g.iter()
                .zip(an_g.iter())
                .map(|(a, b)| rel_err(*a, *b))
                .fold(0.0, f64::max),
        );
    }
    Ok(DerivativeReport {
        checks: vec![term, lx, lg],
    })
}
