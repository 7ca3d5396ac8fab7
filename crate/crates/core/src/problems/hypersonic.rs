//! Hypersonic glider benchmark: longitudinal point-mass reentry dynamics
//! whose lift and drag coefficient models are the component, with final
//! downrange distance as the quantity of interest.
//!
//! States are (x1 downrange [km], x2 altitude [km], v airspeed [m/s],
//! gamma flight path angle [rad]). Aerodynamics and gravity are evaluated in
//! SI units; the kinematic rows divide by 1000 so positions stay in km.

use nalgebra::{DMatrix, DVector};

use super::BenchmarkProblem;
use crate::model::{ComponentModel, DynamicsModel, ErrorEnvelope, QoiModel};

/// Vehicle mass [kg].
const MASS: f64 = 1200.0;
/// Wing reference area [m^2].
const WING_AREA: f64 = 10.0;
/// Gravitational parameter of Earth [m^3/s^2].
const MU: f64 = 3.986e14;
/// Earth radius [m].
const EARTH_RADIUS: f64 = 6.371e6;

/// Exponential atmosphere [kg/m^3] as a function of altitude in km.
pub fn air_density(altitude_km: f64) -> f64 {
    1.225 * (-0.14 * altitude_km).exp()
}

/// Angle of attack schedule [rad]: ramps from 10 down to 6 degrees.
pub fn angle_of_attack(t: f64) -> f64 {
    (10.0 - t / 500.0).to_radians()
}

/// Lift and drag coefficient model `(C_L, C_D)` as a function of the
/// scheduled angle of attack. The perturbed model shifts the lift slope by
/// `dcl` and the quadratic drag coefficient by `dcd`.
struct AeroCoefficients {
    dcl: f64,
    dcd: f64,
}

impl ComponentModel for AeroCoefficients {
    fn state_dim(&self) -> usize {
        4
    }

    fn output_dim(&self) -> usize {
        2
    }

    fn eval(&self, t: f64, _x: &DVector<f64>) -> DVector<f64> {
        let a = angle_of_attack(t);
        DVector::from_vec(vec![
            -0.04 + (0.8 + self.dcl) * a,
            0.012 - 0.01 * a + (0.6 + self.dcd) * a * a,
        ])
    }

    fn jacobian_x(&self, _t: f64, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(2, 4)
    }

    fn hessian_x(&self, _t: f64, _x: &DVector<f64>) -> Option<Vec<DMatrix<f64>>> {
        Some(vec![DMatrix::zeros(4, 4), DMatrix::zeros(4, 4)])
    }
}

/// Point-mass reentry dynamics over a spherical nonrotating Earth.
struct GliderDynamics;

impl GliderDynamics {
    /// Shared intermediates: (rho, qbar, radius [m], gravity [m/s^2]).
    fn ambient(x: &DVector<f64>) -> (f64, f64, f64, f64) {
        let rho = air_density(x[1]);
        let qbar = 0.5 * rho * x[2] * x[2];
        let r = EARTH_RADIUS + 1000.0 * x[1];
        let grav = MU / (r * r);
        (rho, qbar, r, grav)
    }
}

impl DynamicsModel for GliderDynamics {
    fn state_dim(&self) -> usize {
        4
    }

    fn component_dim(&self) -> usize {
        2
    }

    fn eval(&self, _t: f64, x: &DVector<f64>, g: &DVector<f64>) -> DVector<f64> {
        let (cl, cd) = (g[0], g[1]);
        let (v, gamma) = (x[2], x[3]);
        let (_, qbar, r, grav) = Self::ambient(x);
        DVector::from_vec(vec![
            v * gamma.cos() / 1000.0,
            v * gamma.sin() / 1000.0,
            -qbar * cd * WING_AREA / MASS - grav * gamma.sin(),
            qbar * cl * WING_AREA / (MASS * v) - grav * gamma.cos() / v
                + v * gamma.cos() / r,
        ])
    }

    fn jacobian_x(&self, _t: f64, x: &DVector<f64>, g: &DVector<f64>) -> DMatrix<f64> {
        let (cl, cd) = (g[0], g[1]);
        let (v, gamma) = (x[2], x[3]);
        let (rho, qbar, r, grav) = Self::ambient(x);
        let (sin_g, cos_g) = gamma.sin_cos();
        // d rho / d x2 = -0.14 rho, d grav / d x2 = -2000 grav / r.
        let mut a = DMatrix::zeros(4, 4);
        a[(0, 2)] = cos_g / 1000.0;
        a[(0, 3)] = -v * sin_g / 1000.0;
        a[(1, 2)] = sin_g / 1000.0;
        a[(1, 3)] = v * cos_g / 1000.0;
        a[(2, 1)] = 0.14 * qbar * cd * WING_AREA / MASS + 2000.0 * grav * sin_g / r;
        a[(2, 2)] = -rho * v * cd * WING_AREA / MASS;
        a[(2, 3)] = -grav * cos_g;
        a[(3, 1)] = -0.14 * qbar * cl * WING_AREA / (MASS * v)
            + 2000.0 * grav * cos_g / (r * v)
            - 1000.0 * v * cos_g / (r * r);
        a[(3, 2)] = 0.5 * rho * cl * WING_AREA / MASS + grav * cos_g / (v * v) + cos_g / r;
        a[(3, 3)] = grav * sin_g / v - v * sin_g / r;
        a
    }

    fn jacobian_g(&self, _t: f64, x: &DVector<f64>, _g: &DVector<f64>) -> DMatrix<f64> {
        let v = x[2];
        let (_, qbar, _, _) = Self::ambient(x);
        let mut b = DMatrix::zeros(4, 2);
        b[(2, 1)] = -qbar * WING_AREA / MASS;
        b[(3, 0)] = qbar * WING_AREA / (MASS * v);
        b
    }
}

/// Final downrange distance in km.
struct DownrangeDistance;

impl QoiModel for DownrangeDistance {
    fn state_dim(&self) -> usize {
        4
    }

    fn component_dim(&self) -> usize {
        2
    }

    fn terminal(&self, xf: &DVector<f64>) -> f64 {
        xf[0]
    }

    fn terminal_gradient(&self, _xf: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0])
    }

    fn running(&self, _t: f64, _x: &DVector<f64>, _g: &DVector<f64>) -> f64 {
        0.0
    }

    fn running_gradient_x(&self, _t: f64, _x: &DVector<f64>, _g: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(4)
    }

    fn running_gradient_g(&self, _t: f64, _x: &DVector<f64>, _g: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(2)
    }
}

/// Coefficient deviation envelope `(|eps| alpha, |eps| alpha^2)`.
struct CoefficientEnvelope {
    epsilon: f64,
}

impl ErrorEnvelope for CoefficientEnvelope {
    fn output_dim(&self) -> usize {
        2
    }

    fn eval(&self, t: f64, _x: &DVector<f64>) -> DVector<f64> {
        let a = angle_of_attack(t);
        DVector::from_vec(vec![
            (self.epsilon * a).abs(),
            (self.epsilon * a * a).abs(),
        ])
    }
}

/// Builds the hypersonic glider benchmark with perturbation `epsilon` on the
/// lift slope (positive) and quadratic drag coefficient (negative).
pub fn hypersonic(epsilon: f64) -> BenchmarkProblem {
    BenchmarkProblem {
        name: "hypersonic",
        dynamics: Box::new(GliderDynamics),
        g_star: Box::new(AeroCoefficients { dcl: 0.0, dcd: 0.0 }),
        g_eps: Box::new(AeroCoefficients {
            dcl: epsilon,
            dcd: -epsilon,
        }),
        qoi: Box::new(DownrangeDistance),
        envelope: Box::new(CoefficientEnvelope { epsilon }),
        x0: DVector::from_vec(vec![0.0, 80.0, 5000.0, (-5.0f64).to_radians()]),
        t0: 0.0,
        tf: 2000.0,
        epsilon,
        default_grid_n: 2000,
        default_adaptive: true,
        default_lipschitz: 1.0,
        report_scaled_by_lipschitz: true,
        state_labels: vec!["x1", "x2", "v", "gamma"],
        degree_indices: vec![3],
    }
}
