//! Zermelo navigation benchmark: a boat crossing a river whose current
//! profile is the modeled component, with total distance traveled as the
//! quantity of interest.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::BenchmarkProblem;
use crate::model::{ComponentModel, DynamicsModel, ErrorEnvelope, QoiModel};

/// Heading schedule: a fixed sweep from 60 degrees down to -60 degrees.
pub fn control_heading(t: f64) -> f64 {
    (1.0 - 2.0 * t) * PI / 3.0
}

/// Current profile `g(x1) = 2 + 10 x1 - shrink (x1 - 2)^3`; the reference
/// model has `shrink = 1`, the perturbed one `1 - epsilon`.
struct CurrentProfile {
    shrink: f64,
}

impl ComponentModel for CurrentProfile {
    fn state_dim(&self) -> usize {
        2
    }

    fn output_dim(&self) -> usize {
        1
    }

    fn eval(&self, _t: f64, x: &DVector<f64>) -> DVector<f64> {
        let c = x[0] - 2.0;
        DVector::from_element(1, 2.0 + 10.0 * x[0] - self.shrink * c * c * c)
    }

    fn jacobian_x(&self, _t: f64, x: &DVector<f64>) -> DMatrix<f64> {
        let c = x[0] - 2.0;
        DMatrix::from_row_slice(1, 2, &[10.0 - 3.0 * self.shrink * c * c, 0.0])
    }

    fn hessian_x(&self, _t: f64, x: &DVector<f64>) -> Option<Vec<DMatrix<f64>>> {
        let c = x[0] - 2.0;
        Some(vec![DMatrix::from_row_slice(
            2,
            2,
            &[-6.0 * self.shrink * c, 0.0, 0.0, 0.0],
        )])
    }
}

/// Kinematics `x1' = cos u + g x2`, `x2' = sin u` with the current strength
/// scaling the cross-track coordinate.
struct BoatDynamics;

impl DynamicsModel for BoatDynamics {
    fn state_dim(&self) -> usize {
        2
    }

    fn component_dim(&self) -> usize {
        1
    }

    fn eval(&self, t: f64, x: &DVector<f64>, g: &DVector<f64>) -> DVector<f64> {
        let u = control_heading(t);
        DVector::from_vec(vec![u.cos() + g[0] * x[1], u.sin()])
    }

    fn jacobian_x(&self, _t: f64, _x: &DVector<f64>, g: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[0.0, g[0], 0.0, 0.0])
    }

    fn jacobian_g(&self, _t: f64, x: &DVector<f64>, _g: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 1, &[x[1], 0.0])
    }
}

/// Total distance traveled: the running integrand is the speed magnitude.
struct DistanceTraveled;

impl DistanceTraveled {
    fn speed(&self, t: f64, x: &DVector<f64>, g: &DVector<f64>) -> (f64, f64, f64) {
        let u = control_heading(t);
        let vx = u.cos() + g[0] * x[1];
        let vy = u.sin();
        (vx, vy, (vx * vx + vy * vy).sqrt())
    }
}

impl QoiModel for DistanceTraveled {
    fn state_dim(&self) -> usize {
        2
    }

    fn component_dim(&self) -> usize {
        1
    }

    fn terminal(&self, _xf: &DVector<f64>) -> f64 {
        0.0
    }

    fn terminal_gradient(&self, _xf: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(2)
    }

    fn running(&self, t: f64, x: &DVector<f64>, g: &DVector<f64>) -> f64 {
        self.speed(t, x, g).2
    }

    fn running_gradient_x(&self, t: f64, x: &DVector<f64>, g: &DVector<f64>) -> DVector<f64> {
        let (vx, _, s) = self.speed(t, x, g);
        // Guards the square-root singularity at rest; never active here
        // because sin(u) stays bounded away from zero on the horizon interior
        // and the integrand never vanishes along the benchmark trajectory.
        if s < 1e-12 {
            return DVector::zeros(2);
        }
        DVector::from_vec(vec![0.0, vx * g[0] / s])
    }

    fn running_gradient_g(&self, t: f64, x: &DVector<f64>, g: &DVector<f64>) -> DVector<f64> {
        let (vx, _, s) = self.speed(t, x, g);
        if s < 1e-12 {
            return DVector::zeros(1);
        }
        DVector::from_element(1, vx * x[1] / s)
    }
}

/// Pointwise deviation envelope `|epsilon (x1 - 2)^3|`.
struct CubicEnvelope {
    epsilon: f64,
}

impl ErrorEnvelope for CubicEnvelope {
    fn output_dim(&self) -> usize {
        1
    }

    fn eval(&self, _t: f64, x: &DVector<f64>) -> DVector<f64> {
        let c = x[0] - 2.0;
        DVector::from_element(1, (self.epsilon * c * c * c).abs())
    }
}

/// Builds the Zermelo benchmark with perturbation magnitude `epsilon`.
pub fn zermelo(epsilon: f64) -> BenchmarkProblem {
    BenchmarkProblem {
        name: "zermelo",
        dynamics: Box::new(BoatDynamics),
        g_star: Box::new(CurrentProfile { shrink: 1.0 }),
        g_eps: Box::new(CurrentProfile {
            shrink: 1.0 - epsilon,
        }),
        qoi: Box::new(DistanceTraveled),
        envelope: Box::new(CubicEnvelope { epsilon }),
        x0: DVector::zeros(2),
        t0: 0.0,
        tf: 1.0,
        epsilon,
        default_grid_n: 1000,
        default_adaptive: false,
        default_lipschitz: 4.0,
        report_scaled_by_lipschitz: false,
        state_labels: vec!["x1", "x2"],
        degree_indices: vec![],
    }
}
