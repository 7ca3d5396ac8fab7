//! Built-in benchmark problems with analytic models and error envelopes.

mod hypersonic;
mod zermelo;

pub use hypersonic::{air_density, angle_of_attack, hypersonic};
pub use zermelo::{control_heading, zermelo};

use nalgebra::DVector;

use crate::error::Result;
use crate::grid::TimeGrid;
use crate::integrate::{integrate_ivp, GridSpec};
use crate::model::{ComponentModel, DynamicsModel, ErrorEnvelope, QoiModel};
use crate::trajectory::Trajectory;

/// A fully wired benchmark: dynamics, reference and perturbed component
/// models, quantity of interest, error envelope, and solver defaults.
pub struct BenchmarkProblem {
    pub name: &'static str,
    pub dynamics: Box<dyn DynamicsModel>,
    pub g_star: Box<dyn ComponentModel>,
    pub g_eps: Box<dyn ComponentModel>,
    pub qoi: Box<dyn QoiModel>,
    pub envelope: Box<dyn ErrorEnvelope>,
    pub x0: DVector<f64>,
    pub t0: f64,
    pub tf: f64,
    /// Perturbation magnitude the problem was built with.
    pub epsilon: f64,
    /// Output grid resolution (nodes = n + 1).
    pub default_grid_n: usize,
    /// True when the stiff dynamics want the adaptive integrator, with the
    /// result resampled onto the output grid.
    pub default_adaptive: bool,
    /// Lipschitz constant of the dynamics in the component argument.
    pub default_lipschitz: f64,
    /// True when comparison bounds are reported as E/L instead of E.
    pub report_scaled_by_lipschitz: bool,
    pub state_labels: Vec<&'static str>,
    /// State indices presented in degrees rather than radians.
    pub degree_indices: Vec<usize>,
}

impl BenchmarkProblem {
    /// Uniform grid over the horizon with `n` intervals (default when None).
    pub fn output_grid(&self, n: Option<usize>) -> Result<TimeGrid> {
        TimeGrid::uniform(self.t0, self.tf, n.unwrap_or(self.default_grid_n))
    }

    /// Integrates the dynamics under the reference component model.
    pub fn solve_star(&self, spec: &GridSpec) -> Result<Trajectory> {
        let rhs = |t: f64, x: &DVector<f64>| {
            self.dynamics.eval(t, x, &self.g_star.eval(t, x))
        };
        integrate_ivp(rhs, &self.x0, spec)
    }

    /// Integrates the dynamics under the perturbed component model.
    pub fn solve_eps(&self, spec: &GridSpec) -> Result<Trajectory> {
        let rhs = |t: f64, x: &DVector<f64>| {
            self.dynamics.eval(t, x, &self.g_eps.eval(t, x))
        };
        integrate_ivp(rhs, &self.x0, spec)
    }

    /// Envelope radii sampled along a trajectory's nodes.
    pub fn envelope_samples(&self, traj: &Trajectory) -> Vec<DVector<f64>> {
        traj.grid()
            .nodes()
            .iter()
            .zip(traj.states())
            .map(|(&t, x)| self.envelope.eval(t, x))
            .collect()
    }

    /// Pointwise deviation `g_eps - g_star` sampled along a trajectory.
    pub fn deviation_samples(&self, traj: &Trajectory) -> Vec<DVector<f64>> {
        traj.grid()
            .nodes()
            .iter()
            .zip(traj.states())
            .map(|(&t, x)| self.g_eps.eval(t, x) - self.g_star.eval(t, x))
            .collect()
    }
}
