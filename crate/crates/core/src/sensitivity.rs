//! First-order sensitivity of trajectories and quantities of interest to
//! component deviations, via linearized forward and adjoint solves.
//!
//! Given the linearized coefficients `A`, `B` along a nominal trajectory and
//! a component deviation sampled at the nodes, the forward system
//! `dx' = A dx + B dg`, `dx(t0) = 0` yields the state response. The adjoint
//! system `-w' = A^T w + grad_x l + g_x^T grad_g l`, `w(tf) = grad terminal`
//! turns QoI directional derivatives into a single integral against `dg`.

use crate::error::{OdeSensError, Result};
use crate::grid::quadrature;
use crate::integrate::{solve_linear_backward, solve_linear_forward};
use crate::model::{ComponentModel, DynamicsModel, LinearizedSystem, QoiModel};
use crate::trajectory::{MatrixSignal, Trajectory, VectorSignal};
use nalgebra::DVector;

/// State response of the linearized system to a component deviation.
#[derive(Debug, Clone)]
pub struct SensitivityResult {
    /// Trajectory of the state deviation; zero at the initial time.
    pub delta_x: Trajectory,
}

/// Adjoint state of a quantity of interest along a nominal trajectory.
#[derive(Debug, Clone)]
pub struct AdjointResult {
    /// Adjoint trajectory; equals the terminal QoI gradient at `tf`.
    pub lambda: Trajectory,
}

fn validate_samples(
    context: &str,
    grid_len: usize,
    dim: usize,
    samples: &[DVector<f64>],
) -> Result<()> {
    if samples.len() != grid_len {
        return Err(OdeSensError::DimensionMismatch {
            context: context.into(),
            expected: format!("{grid_len} node samples"),
            actual: format!("{}", samples.len()),
        });
    }
    if samples.iter().any(|s| s.len() != dim) {
        return Err(OdeSensError::DimensionMismatch {
            context: context.into(),
            expected: format!("samples of dimension {dim}"),
            actual: "mixed dimensions".into(),
        });
    }
    Ok(())
}

/// Solves the forward sensitivity system for a deviation `dg` sampled at the
/// nodes of the linearization grid (interpolated linearly between nodes).
pub fn solve_sensitivity(
    lin: &LinearizedSystem,
    dg_along: &[DVector<f64>],
) -> Result<SensitivityResult> {
    let grid = lin.grid();
    validate_samples(
        "solve_sensitivity",
        grid.len(),
        lin.component_dim(),
        dg_along,
    )?;
    let dg = VectorSignal::new(grid.clone(), dg_along.to_vec())?;
    let b = lin.b();
    let forcing = move |t: f64| {
        let bt = b.value_at(t).expect("stage time inside signal span");
        let dgt = dg.value_at(t).expect("stage time inside signal span");
        bt * dgt
    };
    let zero = DVector::zeros(lin.state_dim());
    let delta_x = solve_linear_forward(lin.a(), forcing, &zero)?;
    Ok(SensitivityResult { delta_x })
}

/// Evaluates `terminal(x(tf)) + integral of running(t, x, g(t, x))` along a
/// trajectory by trapezoid quadrature at the nodes.
pub fn evaluate_qoi(
    qoi: &dyn QoiModel,
    traj: &Trajectory,
    component: &dyn ComponentModel,
) -> Result<f64> {
    if traj.dim() != qoi.state_dim() {
        return Err(OdeSensError::DimensionMismatch {
            context: "evaluate_qoi".into(),
            expected: format!("trajectory of dimension {}", qoi.state_dim()),
            actual: format!("{}", traj.dim()),
        });
    }
    let grid = traj.grid();
    let mut running = Vec::with_capacity(grid.len());
    for (i, &t) in grid.nodes().iter().enumerate() {
        let x = traj.state(i);
        let g = component.eval(t, x);
        let l = qoi.running(t, x, &g);
        if !l.is_finite() {
            return Err(OdeSensError::NonFinite {
                what: "running cost".into(),
                t,
            });
        }
        running.push(l);
    }
    let terminal = qoi.terminal(traj.final_state());
    if !terminal.is_finite() {
        return Err(OdeSensError::NonFinite {
            what: "terminal cost".into(),
            t: grid.tf(),
        });
    }
    Ok(terminal + quadrature(grid, &running)?)
}

/// Solves the adjoint system of a QoI along a nominal trajectory. The
/// forcing `grad_x l + g_x^T grad_g l` is sampled at the nodes and
/// interpolated linearly between them.
pub fn solve_adjoint(
    lin: &LinearizedSystem,
    qoi: &dyn QoiModel,
    traj: &Trajectory,
    component: &dyn ComponentModel,
) -> Result<AdjointResult> {
    if traj.grid() != lin.grid() {
        return Err(OdeSensError::Validation(
            "adjoint solve needs the trajectory and linearization on one grid".into(),
        ));
    }
    if traj.dim() != qoi.state_dim() {
        return Err(OdeSensError::DimensionMismatch {
            context: "solve_adjoint".into(),
            expected: format!("trajectory of dimension {}", qoi.state_dim()),
            actual: format!("{}", traj.dim()),
        });
    }
    let grid = traj.grid();
    let mut forcing_samples = Vec::with_capacity(grid.len());
    for (i, &t) in grid.nodes().iter().enumerate() {
        let x = traj.state(i);
        let g = component.eval(t, x);
        let gx = component.jacobian_x(t, x);
        let sample = qoi.running_gradient_x(t, x, &g) + gx.transpose() * qoi.running_gradient_g(t, x, &g);
        if sample.iter().any(|v| !v.is_finite()) {
            return Err(OdeSensError::NonFinite {
                what: "adjoint forcing".into(),
                t,
            });
        }
        forcing_samples.push(sample);
    }
    let forcing_sig = VectorSignal::new(grid.clone(), forcing_samples)?;
    let forcing = move |t: f64| forcing_sig.value_at(t).expect("stage time inside signal span");
    let terminal = qoi.terminal_gradient(traj.final_state());
    let lambda = solve_linear_backward(lin.a(), forcing, &terminal)?;
    Ok(AdjointResult { lambda })
}

/// QoI directional derivative via the adjoint: the trapezoid integral of
/// `(B^T lambda + grad_g l)^T dg` over the grid.
pub fn qoi_directional_derivative(
    adjoint: &AdjointResult,
    lin: &LinearizedSystem,
    qoi: &dyn QoiModel,
    traj: &Trajectory,
    component: &dyn ComponentModel,
    dg_along: &[DVector<f64>],
) -> Result<f64> {
    let grid = lin.grid();
    validate_samples(
        "qoi_directional_derivative",
        grid.len(),
        lin.component_dim(),
        dg_along,
    )?;
    if adjoint.lambda.grid() != grid || traj.grid() != grid {
        return Err(OdeSensError::Validation(
            "directional derivative needs adjoint, trajectory, and linearization on one grid".into(),
        ));
    }
    let w = qoi_weight_samples(adjoint, lin, qoi, traj, component)?;
    let mut integrand = Vec::with_capacity(grid.len());
    for i in 0..grid.len() {
        integrand.push(w[i].dot(&dg_along[i]));
    }
    quadrature(grid, &integrand)
}

/// Node samples of the QoI deviation weight `w = B^T lambda + grad_g l`.
pub(crate) fn qoi_weight_samples(
    adjoint: &AdjointResult,
    lin: &LinearizedSystem,
    qoi: &dyn QoiModel,
    traj: &Trajectory,
    component: &dyn ComponentModel,
) -> Result<Vec<DVector<f64>>> {
    let grid = lin.grid();
    let mut out = Vec::with_capacity(grid.len());
    for (i, &t) in grid.nodes().iter().enumerate() {
        let x = traj.state(i);
        let g = component.eval(t, x);
        let w = lin.b().value(i).transpose() * adjoint.lambda.state(i)
            + qoi.running_gradient_g(t, x, &g);
        out.push(w);
    }
    Ok(out)
}

/// Weighted L2 norm of a deviation trajectory:
/// `sqrt(integral of dx^T Q dx)` with `Q = I` when no weight is supplied.
pub fn state_error_norm(delta: &Trajectory, q: Option<&MatrixSignal>) -> Result<f64> {
    let grid = delta.grid();
    let mut integrand = Vec::with_capacity(grid.len());
    match q {
        None => {
            for s in delta.states() {
                integrand.push(s.norm_squared());
            }
        }
        Some(qsig) => {
            if qsig.grid() != grid {
                return Err(OdeSensError::Validation(
                    "state_error_norm weight must live on the trajectory grid".into(),
                ));
            }
            let (r, c) = qsig.shape();
            if r != c || r != delta.dim() {
                return Err(OdeSensError::DimensionMismatch {
                    context: "state_error_norm".into(),
                    expected: format!("square weight of dimension {}", delta.dim()),
                    actual: format!("{r}x{c}"),
                });
            }
            for (i, qm) in qsig.values().iter().enumerate() {
                let asym = (qm - qm.transpose()).amax();
                if asym > 1e-10 * qm.amax().max(1.0) {
                    return Err(OdeSensError::Validation(format!(
                        "state_error_norm weight asymmetric at node {i}"
                    )));
                }
                let s = delta.state(i);
                integrand.push((qm * s).dot(s));
            }
        }
    }
    Ok(quadrature(grid, &integrand)?.max(0.0).sqrt())
}

/// Residual diagnostics of a trajectory against composed dynamics.
#[derive(Debug, Clone)]
pub struct ResidualReport {
    /// Sup over nodes of the max-norm of `x'(t_i) - f(t_i, x_i, g(t_i, x_i))`.
    pub dynamics_residual: f64,
    /// Euclidean distance between the stored initial state and `x0`.
    pub initial_residual: f64,
}

/// Measures how well a trajectory satisfies `x' = f(t, x, g(t, x))`, `x(t0) = x0`.
/// The trajectory must carry derivative samples.
pub fn residual_psi(
    traj: &Trajectory,
    dynamics: &dyn DynamicsModel,
    component: &dyn ComponentModel,
    x0: &DVector<f64>,
) -> Result<ResidualReport> {
    let derivs = traj.derivs().ok_or_else(|| {
        OdeSensError::Validation("residual_psi needs a trajectory with derivative samples".into())
    })?;
    if x0.len() != traj.dim() {
        return Err(OdeSensError::DimensionMismatch {
            context: "residual_psi".into(),
            expected: format!("initial state of dimension {}", traj.dim()),
            actual: format!("{}", x0.len()),
        });
    }
    let mut worst = 0.0f64;
    for (i, &t) in traj.grid().nodes().iter().enumerate() {
        let f = crate::model::eval_rhs(dynamics, component, t, traj.state(i))?;
        worst = worst.max((&derivs[i] - f).amax());
    }
    Ok(ResidualReport {
        dynamics_residual: worst,
        initial_residual: (traj.state(0) - x0).norm(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TimeGrid;
    use crate::integrate::{integrate_ivp, GridSpec};
    use crate::model::{linearize, DynamicsModel};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    /// f(t, x, g) = a x + g with scalar state and component.
    struct LinearDynamics {
        a: f64,
    }

    impl DynamicsModel for LinearDynamics {
        fn state_dim(&self) -> usize {
            1
        }
        fn component_dim(&self) -> usize {
            1
        }
        fn eval(&self, _t: f64, x: &DVector<f64>, g: &DVector<f64>) -> DVector<f64> {
            x * self.a + g
        }
        fn jacobian_x(&self, _t: f64, _x: &DVector<f64>, _g: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::from_element(1, 1, self.a)
        }
        fn jacobian_g(&self, _t: f64, _x: &DVector<f64>, _g: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::from_element(1, 1, 1.0)
        }
    }

    /// g(t, x) = 0 so composed dynamics reduce to x' = a x.
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

    /// Terminal-only QoI: q = x1(tf).
    struct TerminalQoi;

    impl QoiModel for TerminalQoi {
        fn state_dim(&self) -> usize {
            1
        }
        fn component_dim(&self) -> usize {
            1
        }
        fn terminal(&self, xf: &DVector<f64>) -> f64 {
            xf[0]
        }
        fn terminal_gradient(&self, _xf: &DVector<f64>) -> DVector<f64> {
            DVector::from_element(1, 1.0)
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

    fn nominal(a: f64, n: usize) -> (Trajectory, LinearizedSystem) {
        let grid = TimeGrid::uniform(0.0, 1.0, n).unwrap();
        let dyn_model = LinearDynamics { a };
        let traj = integrate_ivp(
            |t, x| crate::model::eval_rhs(&dyn_model, &ZeroComponent, t, x).unwrap(),
            &DVector::from_element(1, 1.0),
            &GridSpec::fixed(grid),
        )
        .unwrap();
        let lin = linearize(&dyn_model, &ZeroComponent, &traj).unwrap();
        (traj, lin)
    }

    #[test]
    fn sensitivity_starts_at_zero_and_matches_closed_form() {
        // dx' = a dx + dg with dg = 1: dx(t) = (e^{a t} - 1)/a.
        let a = 1.5;
        let (_, lin) = nominal(a, 400);
        let dg = vec![DVector::from_element(1, 1.0); lin.grid().len()];
        let sens = solve_sensitivity(&lin, &dg).unwrap();
        assert_eq!(sens.delta_x.state(0)[0], 0.0);
        let expect = ((a).exp() - 1.0) / a;
        assert_relative_eq!(sens.delta_x.final_state()[0], expect, epsilon = 1e-7);
    }

    #[test]
    fn sensitivity_is_linear_in_direction() {
        let (_, lin) = nominal(-0.7, 50);
        let n = lin.grid().len();
        let d1: Vec<DVector<f64>> = lin
            .grid()
            .nodes()
            .iter()
            .map(|&t| DVector::from_element(1, t.sin()))
            .collect();
        let d2: Vec<DVector<f64>> = lin
            .grid()
            .nodes()
            .iter()
            .map(|&t| DVector::from_element(1, 1.0 - t))
            .collect();
        let combo: Vec<DVector<f64>> = (0..n).map(|i| &d1[i] * 2.5 + &d2[i] * -1.25).collect();
        let s1 = solve_sensitivity(&lin, &d1).unwrap();
        let s2 = solve_sensitivity(&lin, &d2).unwrap();
        let sc = solve_sensitivity(&lin, &combo).unwrap();
        for i in 0..n {
            let lhs = sc.delta_x.state(i)[0];
            let rhs = 2.5 * s1.delta_x.state(i)[0] - 1.25 * s2.delta_x.state(i)[0];
            assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1.0));
        }
    }

    #[test]
    fn adjoint_terminal_condition_and_closed_form() {
        // -w' = a w, w(tf) = 1: w(t) = e^{a (tf - t)}; with a = 1, w(0) = e.
        let (traj, lin) = nominal(1.0, 200);
        let adj = solve_adjoint(&lin, &TerminalQoi, &traj, &ZeroComponent).unwrap();
        assert_relative_eq!(adj.lambda.final_state()[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(
            adj.lambda.state(0)[0],
            std::f64::consts::E,
            epsilon = 1e-6
        );
    }

    #[test]
    fn adjoint_matches_forward_sensitivity_for_terminal_qoi() {
        // For q = x(tf): adjoint integral equals grad_phi^T dx(tf).
        let (traj, lin) = nominal(0.8, 800);
        let dg: Vec<DVector<f64>> = lin
            .grid()
            .nodes()
            .iter()
            .map(|&t| DVector::from_element(1, (2.0 * t).cos()))
            .collect();
        let sens = solve_sensitivity(&lin, &dg).unwrap();
        let adj = solve_adjoint(&lin, &TerminalQoi, &traj, &ZeroComponent).unwrap();
        let via_adjoint =
            qoi_directional_derivative(&adj, &lin, &TerminalQoi, &traj, &ZeroComponent, &dg)
                .unwrap();
        let via_forward = sens.delta_x.final_state()[0];
        assert_relative_eq!(via_adjoint, via_forward, epsilon = 1e-6);
    }

    // Oracle: delta(t) = (t, 0), Q = I gives sqrt(1/3) = 0.57735026918962576.
    #[test]
    fn state_error_norm_of_ramp() {
        let grid = TimeGrid::uniform(0.0, 1.0, 1000).unwrap();
        let states = grid
            .nodes()
            .iter()
            .map(|&t| DVector::from_vec(vec![t, 0.0]))
            .collect();
        let delta = Trajectory::new(grid, states, None).unwrap();
        let norm = state_error_norm(&delta, None).unwrap();
        assert_relative_eq!(norm, 0.5773502691896257, epsilon = 1e-6);
    }

    #[test]
    fn state_error_norm_rejects_asymmetric_weight() {
        let grid = TimeGrid::uniform(0.0, 1.0, 4).unwrap();
        let states = grid
            .nodes()
            .iter()
            .map(|_| DVector::from_vec(vec![1.0, 0.0]))
            .collect();
        let delta = Trajectory::new(grid.clone(), states, None).unwrap();
        let q = MatrixSignal::constant(grid, DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]));
        assert!(state_error_norm(&delta, Some(&q)).is_err());
    }

    #[test]
    fn evaluate_qoi_sums_terminal_and_running() {
        struct RunningQoi;
        impl QoiModel for RunningQoi {
            fn state_dim(&self) -> usize {
                1
            }
            fn component_dim(&self) -> usize {
                1
            }
            fn terminal(&self, xf: &DVector<f64>) -> f64 {
                2.0 * xf[0]
            }
            fn terminal_gradient(&self, _xf: &DVector<f64>) -> DVector<f64> {
                DVector::from_element(1, 2.0)
            }
            fn running(&self, t: f64, _x: &DVector<f64>, _g: &DVector<f64>) -> f64 {
                t
            }
            fn running_gradient_x(&self, _t: f64, _x: &DVector<f64>, _g: &DVector<f64>) -> DVector<f64> {
                DVector::zeros(1)
            }
            fn running_gradient_g(&self, _t: f64, _x: &DVector<f64>, _g: &DVector<f64>) -> DVector<f64> {
                DVector::zeros(1)
            }
        }
        let grid = TimeGrid::uniform(0.0, 1.0, 10).unwrap();
        let states = grid.nodes().iter().map(|_| DVector::from_element(1, 3.0)).collect();
        let traj = Trajectory::new(grid, states, None).unwrap();
        // terminal 2 * 3 = 6 plus integral of t over [0, 1] = 0.5.
        let q = evaluate_qoi(&RunningQoi, &traj, &ZeroComponent).unwrap();
        assert_relative_eq!(q, 6.5, epsilon = 1e-12);
    }

    #[test]
    fn residual_zero_for_solver_output_and_nonzero_for_shifted_start() {
        let dyn_model = LinearDynamics { a: 1.0 };
        let grid = TimeGrid::uniform(0.0, 1.0, 50).unwrap();
        let x0 = DVector::from_element(1, 1.0);
        let traj = integrate_ivp(
            |t, x| crate::model::eval_rhs(&dyn_model, &ZeroComponent, t, x).unwrap(),
            &x0,
            &GridSpec::fixed(grid),
        )
        .unwrap();
        let rep = residual_psi(&traj, &dyn_model, &ZeroComponent, &x0).unwrap();
        assert!(rep.dynamics_residual <= 1e-12);
        assert!(rep.initial_residual <= 1e-15);

        let shifted = DVector::from_element(1, 2.0);
        let rep2 = residual_psi(&traj, &dyn_model, &ZeroComponent, &shifted).unwrap();
        assert_relative_eq!(rep2.initial_residual, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn residual_exact_solution_is_consistent() {
        // Hand-built exact solution of x' = x with exact derivative samples.
        let grid = TimeGrid::uniform(0.0, 1.0, 64).unwrap();
        let states: Vec<DVector<f64>> = grid
            .nodes()
            .iter()
            .map(|&t| DVector::from_element(1, t.exp()))
            .collect();
        let derivs = states.clone();
        let traj = Trajectory::new(grid, states, Some(derivs)).unwrap();
        let rep = residual_psi(
            &traj,
            &LinearDynamics { a: 1.0 },
            &ZeroComponent,
            &DVector::from_element(1, 1.0),
        )
        .unwrap();
        assert!(rep.dynamics_residual <= 1e-7);
        assert!(rep.initial_residual <= 1e-7);
    }
}
