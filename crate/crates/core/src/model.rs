//! Model traits for dynamics, component functions, quantities of interest,
//! and deviation envelopes, plus linearization along a nominal trajectory.
//!
//! The dynamics are `x' = f(t, x, g(t, x))` where `g` is the component under
//! study. All linearized quantities follow the chain rule through both the
//! explicit state argument and the component output:
//! `A(t) = f_x + f_g g_x` and `B(t) = f_g`, evaluated along a trajectory.

use crate::error::{OdeSensError, Result};
use crate::grid::TimeGrid;
use crate::trajectory::{MatrixSignal, Trajectory};
use nalgebra::{DMatrix, DVector};

/// State-dependent component function `g(t, x)` with first (and optionally
/// second) state derivatives.
pub trait ComponentModel: Send + Sync {
    fn state_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn eval(&self, t: f64, x: &DVector<f64>) -> DVector<f64>;
    /// Jacobian with respect to the state, `output_dim x state_dim`.
    fn jacobian_x(&self, t: f64, x: &DVector<f64>) -> DMatrix<f64>;
    /// Per-output Hessians with respect to the state; `None` when the model
    /// does not carry second derivatives.
    fn hessian_x(&self, _t: f64, _x: &DVector<f64>) -> Option<Vec<DMatrix<f64>>> {
        None
    }
}

/// Right-hand side `f(t, x, g)` with partial derivatives in `x` and `g`.
pub trait DynamicsModel: Send + Sync {
    fn state_dim(&self) -> usize;
    fn component_dim(&self) -> usize;
    fn eval(&self, t: f64, x: &DVector<f64>, g: &DVector<f64>) -> DVector<f64>;
    /// Partial Jacobian in `x` holding `g` fixed, `state_dim x state_dim`.
    fn jacobian_x(&self, t: f64, x: &DVector<f64>, g: &DVector<f64>) -> DMatrix<f64>;
    /// Partial Jacobian in `g`, `state_dim x component_dim`.
    fn jacobian_g(&self, t: f64, x: &DVector<f64>, g: &DVector<f64>) -> DMatrix<f64>;
}

/// Quantity of interest `q = terminal(x(tf)) + integral of running(t, x, g)`.
pub trait QoiModel: Send + Sync {
    fn state_dim(&self) -> usize;
    fn component_dim(&self) -> usize;
    fn terminal(&self, xf: &DVector<f64>) -> f64;
    fn terminal_gradient(&self, xf: &DVector<f64>) -> DVector<f64>;
    fn running(&self, t: f64, x: &DVector<f64>, g: &DVector<f64>) -> f64;
    fn running_gradient_x(&self, t: f64, x: &DVector<f64>, g: &DVector<f64>) -> DVector<f64>;
    fn running_gradient_g(&self, t: f64, x: &DVector<f64>, g: &DVector<f64>) -> DVector<f64>;
}

/// Componentwise deviation envelope `eps(t, x) >= 0` bounding `|g_eps - g_star|`.
pub trait ErrorEnvelope: Send + Sync {
    fn output_dim(&self) -> usize;
    fn eval(&self, t: f64, x: &DVector<f64>) -> DVector<f64>;
}

/// Evaluates the composed right-hand side `f(t, x, g(t, x))`.
pub fn eval_rhs(
    dynamics: &dyn DynamicsModel,
    component: &dyn ComponentModel,
    t: f64,
    x: &DVector<f64>,
) -> Result<DVector<f64>> {
    if x.len() != dynamics.state_dim() {
        return Err(OdeSensError::DimensionMismatch {
            context: "eval_rhs".into(),
            expected: format!("state of dimension {}", dynamics.state_dim()),
            actual: format!("{}", x.len()),
        });
    }
    if component.output_dim() != dynamics.component_dim() {
        return Err(OdeSensError::DimensionMismatch {
            context: "eval_rhs".into(),
            expected: format!("component of dimension {}", dynamics.component_dim()),
            actual: format!("{}", component.output_dim()),
        });
    }
    let g = component.eval(t, x);
    if g.iter().any(|v| !v.is_finite()) {
        return Err(OdeSensError::NonFinite {
            what: "component output".into(),
            t,
        });
    }
    let fx = dynamics.eval(t, x, &g);
    if fx.iter().any(|v| !v.is_finite()) {
        return Err(OdeSensError::NonFinite {
            what: "right-hand side".into(),
            t,
        });
    }
    Ok(fx)
}

/// Coefficient signals of the linearized deviation dynamics along a nominal
/// trajectory: `A(t) = f_x + f_g g_x` and `B(t) = f_g`.
#[derive(Debug, Clone)]
pub struct LinearizedSystem {
    a: MatrixSignal,
    b: MatrixSignal,
}

impl LinearizedSystem {
    pub fn new(a: MatrixSignal, b: MatrixSignal) -> Result<Self> {
        if a.grid() != b.grid() {
            return Err(OdeSensError::Validation(
                "linearized system signals must share one grid".into(),
            ));
        }
        let (ar, ac) = a.shape();
        let (br, _) = b.shape();
        if ar != ac || br != ar {
            return Err(OdeSensError::DimensionMismatch {
                context: "LinearizedSystem".into(),
                expected: format!("A square and B with {ar} rows"),
                actual: format!("A {:?}, B {:?}", a.shape(), b.shape()),
            });
        }
        Ok(Self { a, b })
    }

    pub fn a(&self) -> &MatrixSignal {
        &self.a
    }

    pub fn b(&self) -> &MatrixSignal {
        &self.b
    }

    pub fn grid(&self) -> &TimeGrid {
        self.a.grid()
    }

    pub fn state_dim(&self) -> usize {
        self.a.shape().0
    }

    pub fn component_dim(&self) -> usize {
        self.b.shape().1
    }
}

/// Samples `A` and `B` of the linearized deviation dynamics at the nodes of
/// the nominal trajectory.
pub fn linearize(
    dynamics: &dyn DynamicsModel,
    component: &dyn ComponentModel,
    traj: &Trajectory,
) -> Result<LinearizedSystem> {
    if traj.dim() != dynamics.state_dim() {
        return Err(OdeSensError::DimensionMismatch {
            context: "linearize".into(),
            expected: format!("trajectory of dimension {}", dynamics.state_dim()),
            actual: format!("{}", traj.dim()),
        });
    }
    let grid = traj.grid().clone();
    let mut a_vals = Vec::with_capacity(grid.len());
    let mut b_vals = Vec::with_capacity(grid.len());
    for (i, &t) in grid.nodes().iter().enumerate() {
        let x = traj.state(i);
        let g = component.eval(t, x);
        let fx = dynamics.jacobian_x(t, x, &g);
        let fg = dynamics.jacobian_g(t, x, &g);
        let gx = component.jacobian_x(t, x);
        let a = &fx + &fg * &gx;
        if a.iter().any(|v| !v.is_finite()) || fg.iter().any(|v| !v.is_finite()) {
            return Err(OdeSensError::NonFinite {
                what: "linearized coefficients".into(),
                t,
            });
        }
        a_vals.push(a);
        b_vals.push(fg);
    }
    LinearizedSystem::new(MatrixSignal::new(grid.clone(), a_vals)?, MatrixSignal::new(grid, b_vals)?)
}

/// Node-wise component deviation along a trajectory, checked against an envelope.
#[derive(Debug, Clone)]
pub struct ModelDeviation {
    pub grid: TimeGrid,
    /// `g_eps(t_i, x_i) - g_star(t_i, x_i)` per node.
    pub deviations: Vec<DVector<f64>>,
    /// Envelope samples `eps(t_i, x_i)` per node.
    pub envelope: Vec<DVector<f64>>,
    /// Node indices where some component of `|deviation|` exceeds the envelope.
    pub violations: Vec<usize>,
}

/// Samples `g_eps - g_star` along a trajectory and flags envelope violations.
pub fn model_deviation(
    g_eps: &dyn ComponentModel,
    g_star: &dyn ComponentModel,
    traj: &Trajectory,
    envelope: &dyn ErrorEnvelope,
) -> Result<ModelDeviation> {
    if g_eps.output_dim() != g_star.output_dim() || envelope.output_dim() != g_star.output_dim() {
        return Err(OdeSensError::DimensionMismatch {
            context: "model_deviation".into(),
            expected: format!("component dimension {}", g_star.output_dim()),
            actual: format!(
                "g_eps {}, envelope {}",
                g_eps.output_dim(),
                envelope.output_dim()
            ),
        });
    }
    let grid = traj.grid().clone();
    let mut deviations = Vec::with_capacity(grid.len());
    let mut env = Vec::with_capacity(grid.len());
    let mut violations = Vec::new();
    // Tiny slack so an exact envelope |dg| does not flag roundoff.
    let tol = 1e-12;
    for (i, &t) in grid.nodes().iter().enumerate() {
        let x = traj.state(i);
        let d = g_eps.eval(t, x) - g_star.eval(t, x);
        let e = envelope.eval(t, x);
        if e.iter().any(|v| *v < 0.0) {
            return Err(OdeSensError::Validation(format!(
                "envelope must be nonnegative, found negative entry at t = {t}"
            )));
        }
        if d
            .iter()
            .zip(e.iter())
            .any(|(di, ei)| di.abs() > ei + tol * ei.abs().max(1.0))
        {
            violations.push(i);
        }
        deviations.push(d);
        env.push(e);
    }
    Ok(ModelDeviation {
        grid,
        deviations,
        envelope: env,
        violations,
    })
}

/// Sampling box for [`gnorm_sampled`]: a time range crossed with a state box,
/// both sampled uniformly including endpoints.
#[derive(Debug, Clone)]
pub struct SampleBox {
    pub t0: f64,
    pub tf: f64,
    pub t_count: usize,
    pub x_lo: DVector<f64>,
    pub x_hi: DVector<f64>,
    /// Samples per state dimension.
    pub x_count: usize,
}

impl SampleBox {
    fn validate(&self, dim: usize) -> Result<()> {
        if self.x_lo.len() != dim || self.x_hi.len() != dim {
            return Err(OdeSensError::DimensionMismatch {
                context: "SampleBox".into(),
                expected: format!("bounds of dimension {dim}"),
                actual: format!("{} and {}", self.x_lo.len(), self.x_hi.len()),
            });
        }
        if self.t_count == 0 || self.x_count == 0 {
            return Err(OdeSensError::Validation(
                "SampleBox needs at least one sample per axis".into(),
            ));
        }
        if !(self.tf >= self.t0) {
            return Err(OdeSensError::Validation(format!(
                "SampleBox time range is empty: [{}, {}]",
                self.t0, self.tf
            )));
        }
        if self.x_lo.iter().zip(self.x_hi.iter()).any(|(lo, hi)| lo > hi) {
            return Err(OdeSensError::Validation(
                "SampleBox has x_lo > x_hi in some dimension".into(),
            ));
        }
        Ok(())
    }

    fn axis_value(&self, dim: usize, idx: usize) -> f64 {
        if self.x_count == 1 {
            return 0.5 * (self.x_lo[dim] + self.x_hi[dim]);
        }
        let theta = idx as f64 / (self.x_count - 1) as f64;
        self.x_lo[dim] + theta * (self.x_hi[dim] - self.x_lo[dim])
    }

    fn time_value(&self, idx: usize) -> f64 {
        if self.t_count == 1 {
            return 0.5 * (self.t0 + self.tf);
        }
        self.t0 + (self.tf - self.t0) * idx as f64 / (self.t_count - 1) as f64
    }
}

/// Sampled estimate of the sum of derivative norms of `g` up to order `k`
/// over a time-state box: `max over samples of sum_{n <= k} ||g^(n)||`.
///
/// Vector outputs use the Euclidean norm, Jacobians the Frobenius norm, and
/// the second-derivative stack the Frobenius norm of all entries. Orders
/// above 2 are not supported; order 2 requires the model to provide Hessians.
pub fn gnorm_sampled(g: &dyn ComponentModel, k: usize, spec: &SampleBox) -> Result<f64> {
    if k > 2 {
        return Err(OdeSensError::Validation(format!(
            "gnorm_sampled supports derivative order <= 2, got {k}"
        )));
    }
    let dim = g.state_dim();
    spec.validate(dim)?;
    let mut best = 0.0f64;
    let points = spec.x_count.pow(dim as u32);
    let mut x = DVector::zeros(dim);
    for ti in 0..spec.t_count {
        let t = spec.time_value(ti);
        for flat in 0..points {
            let mut rem = flat;
            for d in 0..dim {
                x[d] = spec.axis_value(d, rem % spec.x_count);
                rem /= spec.x_count;
            }
            let mut total = g.eval(t, &x).norm();
            if k >= 1 {
                total += g.jacobian_x(t, &x).norm();
            }
            if k >= 2 {
                let hess = g.hessian_x(t, &x).ok_or_else(|| {
                    OdeSensError::MissingCapability(
                        "gnorm_sampled with k = 2 needs hessian_x".into(),
                    )
                })?;
                let sq: f64 = hess.iter().map(|m| m.norm_squared()).sum();
                total += sq.sqrt();
            }
            if !total.is_finite() {
                return Err(OdeSensError::NonFinite {
                    what: "gnorm sample".into(),
                    t,
                });
            }
            best = best.max(total);
        }
    }
    Ok(best)
}
