//! Sensitivity analysis and worst-case error bounds for ODE component functions.
//!
//! This crate quantifies how replacing a state-dependent component `g` inside
//! an ODE right-hand side `x' = f(t, x, g(t, x))` perturbs the solution and
//! derived quantities of interest. It provides:
//!
//! - first-order sensitivity estimates of the state and QoI response to a
//!   component deviation, via a linearized forward system and an adjoint
//!   system solved along a nominal trajectory;
//! - worst-case error bounds over componentwise deviation envelopes: a
//!   box-constrained convex-maximization QP for the weighted L2 state error,
//!   and a closed-form bound for QoI errors;
//! - classical integral-inequality (Gronwall-type) bounds driven by a
//!   logarithmic-norm Lipschitz signal, for comparison with the above;
//! - two built-in benchmark problems (a steering problem with a nonlinear
//!   drift component and a hypersonic glider with aerodynamic coefficient
//!   models) used by the test suite and the companion CLI.

// Negated comparisons in validation guards are deliberate: `!(a < b)` also
// rejects NaN, which the positive form would let through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

/// Crate version string, recorded in experiment manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod bounds;
pub mod error;
pub mod fdcheck;
pub mod grid;
pub mod gronwall;
pub mod integrate;
pub mod model;
pub mod problems;
pub mod sensitivity;
pub mod trajectory;

pub use bounds::{
    build_state_bound_qp, maximize_box_qp, qoi_error_bound, state_error_bound, BoundKind,
    BoundReport, CondensedBoxQP, QpOptions, QpSolution,
};
pub use error::{OdeSensError, Result};
pub use grid::{cumulative_quadrature, quadrature, TimeGrid};
pub use gronwall::{
    gronwall_state_bound, lemma_comparison, log_lipschitz_along, log_norm, GronwallReport,
    LogLipschitzSignal,
};
pub use integrate::{
    integrate_ivp, solve_linear_backward, solve_linear_forward, AdaptiveOptions, GridSpec, Method,
};
pub use model::{
    linearize, ComponentModel, DynamicsModel, ErrorEnvelope, LinearizedSystem, QoiModel,
};
pub use problems::{hypersonic, zermelo, BenchmarkProblem};
pub use sensitivity::{
    evaluate_qoi, qoi_directional_derivative, solve_adjoint, solve_sensitivity, state_error_norm,
    AdjointResult, SensitivityResult,
};
pub use trajectory::{MatrixSignal, Trajectory, VectorSignal};
