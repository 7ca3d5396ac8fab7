//! Declarative custom problems loaded from a JSON spec file.
//!
//! The loader deliberately covers only the linear-plus-lookup family
//!   x' = M x + N g(t) + c
//! with the nominal component, the deviation direction, and the error
//! envelope all given as piecewise-linear tables in t, and a linear terminal
//! quantity of interest w . x(tf). Anything richer needs to link against the
//! library and implement the model traits directly.
//!
//! Epsilon scaling: g_eps = g_star + epsilon * deviation, and the envelope is
//! |epsilon| times the envelope table, so one spec file serves a whole sweep.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::CliError;
use odesens_core::{BenchmarkProblem, ComponentModel, DynamicsModel, ErrorEnvelope, QoiModel};

/// Largest state dimension the loader accepts. Keeps the exhaustive QP
/// fallback and the label pool honest.
pub const MAX_STATE_DIM: usize = 16;

const STATE_LABELS: [&str; MAX_STATE_DIM] = [
    "x1", "x2", "x3", "x4", "x5", "x6", "x7", "x8", "x9", "x10", "x11", "x12", "x13", "x14",
    "x15", "x16",
];

/// A time-indexed table of component-space vectors.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableSpec {
    pub t: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

/// Parsed and validated custom problem file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomSpec {
    pub state_dim: usize,
    pub component_dim: usize,
    pub t0: f64,
    pub tf: f64,
    pub x0: Vec<f64>,
    /// State matrix M, row major.
    pub m: Vec<Vec<f64>>,
    /// Component matrix N, row major.
    pub n: Vec<Vec<f64>>,
    /// Constant drift c.
    pub c: Vec<f64>,
    pub g_star: TableSpec,
    /// Per-unit-epsilon deviation direction.
    pub deviation: TableSpec,
    /// Per-unit-epsilon envelope; must dominate |deviation| pointwise.
    pub envelope: TableSpec,
    /// Terminal QoI weights.
    pub qoi_terminal: Vec<f64>,
    pub grid_n: Option<usize>,
    pub lipschitz: Option<f64>,
}

fn bad(path: &Path, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("problem file {}: {msg}", path.display()))
}

fn check_matrix(
    path: &Path,
    name: &str,
    rows: &[Vec<f64>],
    nrows: usize,
    ncols: usize,
) -> Result<(), CliError> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(bad(path, format!("{name} must be {nrows} x {ncols}")));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(bad(path, format!("{name} has a non-finite entry")));
    }
    Ok(())
}

fn check_table(path: &Path, name: &str, table: &TableSpec, dim: usize) -> Result<(), CliError> {
    if table.t.is_empty() || table.t.len() != table.values.len() {
        return Err(bad(
            path,
            format!("table {name} needs matching, nonempty t and values"),
        ));
    }
    if table.t.iter().any(|v| !v.is_finite()) {
        return Err(bad(path, format!("table {name} has a non-finite time")));
    }
    if table.t.windows(2).any(|w| w[0] >= w[1]) {
        return Err(bad(path, format!("table {name} times must strictly increase")));
    }
    for row in &table.values {
        if row.len() != dim {
            return Err(bad(path, format!("table {name} rows must have {dim} entries")));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(bad(path, format!("table {name} has a non-finite value")));
        }
    }
    Ok(())
}

impl CustomSpec {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let spec: CustomSpec = serde_json::from_str(&text).map_err(|e| bad(path, e))?;
        spec.validate(path)?;
        Ok(spec)
    }

    fn validate(&self, path: &Path) -> Result<(), CliError> {
        if self.state_dim == 0 || self.state_dim > MAX_STATE_DIM {
            return Err(bad(path, format!("state_dim must be in 1..={MAX_STATE_DIM}")));
        }
        if self.component_dim == 0 {
            return Err(bad(path, "component_dim must be at least 1"));
        }
        if !self.t0.is_finite() || !self.tf.is_finite() || self.tf <= self.t0 {
            return Err(bad(path, "need finite t0 < tf"));
        }
        if self.x0.len() != self.state_dim || self.x0.iter().any(|v| !v.is_finite()) {
            return Err(bad(path, "x0 must be a finite vector of state_dim entries"));
        }
        if self.qoi_terminal.len() != self.state_dim
            || self.qoi_terminal.iter().any(|v| !v.is_finite())
        {
            return Err(bad(
                path,
                "qoi_terminal must be a finite vector of state_dim entries",
            ));
        }
        check_matrix(path, "m", &self.m, self.state_dim, self.state_dim)?;
        check_matrix(path, "n", &self.n, self.state_dim, self.component_dim)?;
        if self.c.len() != self.state_dim || self.c.iter().any(|v| !v.is_finite()) {
            return Err(bad(path, "c must be a finite vector of state_dim entries"));
        }
        check_table(path, "g_star", &self.g_star, self.component_dim)?;
        check_table(path, "deviation", &self.deviation, self.component_dim)?;
        check_table(path, "envelope", &self.envelope, self.component_dim)?;
        if self
            .envelope
            .values
            .iter()
            .flatten()
            .any(|v| *v < 0.0)
        {
            return Err(bad(path, "envelope values must be nonnegative"));
        }
        if let Some(n) = self.grid_n {
            if n < 2 {
                return Err(bad(path, "grid_n must be at least 2"));
            }
        }
        if let Some(l) = self.lipschitz {
            if !l.is_finite() || l < 0.0 {
                return Err(bad(path, "lipschitz must be finite and nonnegative"));
            }
        }

        // Both tables are piecewise linear, so dominance at the union of
        // their nodes implies dominance everywhere in between.
        let dev = TableSignal::from_spec(&self.deviation);
        let env = TableSignal::from_spec(&self.envelope);
        let mut nodes: Vec<f64> = Vec::new();
        nodes.extend([self.t0, self.tf]);
        nodes.extend(self.deviation.t.iter().copied());
        nodes.extend(self.envelope.t.iter().copied());
        for t in nodes {
            let t = t.clamp(self.t0, self.tf);
            let d = dev.value(t);
            let e = env.value(t);
            for i in 0..self.component_dim {
                if d[i].abs() > e[i] + 1e-12 * e[i].max(1.0) {
                    return Err(bad(
                        path,
                        format!("envelope does not dominate |deviation| at t = {t} (component {i})"),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Instantiates the problem at the given epsilon. The file is validated
    /// at load time, so construction cannot fail.
    pub fn build(&self, epsilon: f64) -> BenchmarkProblem {
        let star = TableSignal::from_spec(&self.g_star);
        let dev = TableSignal::from_spec(&self.deviation);
        let env = TableSignal::from_spec(&self.envelope);
        let flat =
            |rows: &[Vec<f64>]| rows.iter().flatten().copied().collect::<Vec<f64>>();
        let m = DMatrix::from_row_slice(self.state_dim, self.state_dim, &flat(&self.m));
        let n = DMatrix::from_row_slice(self.state_dim, self.component_dim, &flat(&self.n));
        let c = DVector::from_vec(self.c.clone());

        BenchmarkProblem {
            name: "custom",
            dynamics: Box::new(LinearDynamics { m, n, c }),
            g_star: Box::new(LookupComponent {
                state_dim: self.state_dim,
                base: star.clone(),
                bump: None,
            }),
            g_eps: Box::new(LookupComponent {
                state_dim: self.state_dim,
                base: star,
                bump: Some((epsilon, dev)),
            }),
            qoi: Box::new(LinearTerminalQoi {
                w: DVector::from_vec(self.qoi_terminal.clone()),
                component_dim: self.component_dim,
            }),
            envelope: Box::new(ScaledTableEnvelope {
                table: env,
                scale: epsilon.abs(),
            }),
            x0: DVector::from_vec(self.x0.clone()),
            t0: self.t0,
            tf: self.tf,
            epsilon,
            default_grid_n: self.grid_n.unwrap_or(1000),
            default_adaptive: false,
            default_lipschitz: self.lipschitz.unwrap_or(1.0),
            report_scaled_by_lipschitz: false,
            state_labels: STATE_LABELS[..self.state_dim].to_vec(),
            degree_indices: Vec::new(),
        }
    }
}

/// Piecewise-linear interpolant over strictly increasing nodes, clamped
/// outside the table range.
#[derive(Debug, Clone)]
struct TableSignal {
    ts: Vec<f64>,
    values: Vec<DVector<f64>>,
}

impl TableSignal {
    fn from_spec(spec: &TableSpec) -> Self {
        Self {
            ts: spec.t.clone(),
            values: spec
                .values
                .iter()
                .map(|row| DVector::from_vec(row.clone()))
                .collect(),
        }
    }

    fn value(&self, t: f64) -> DVector<f64> {
        let last = self.ts.len() - 1;
        if t <= self.ts[0] {
            return self.values[0].clone();
        }
        if t >= self.ts[last] {
            return self.values[last].clone();
        }
        let hi = self.ts.partition_point(|&node| node <= t);
        let (t0, t1) = (self.ts[hi - 1], self.ts[hi]);
        let w = (t - t0) / (t1 - t0);
        &self.values[hi - 1] * (1.0 - w) + &self.values[hi] * w
    }

    fn dim(&self) -> usize {
        self.values[0].len()
    }
}

struct LinearDynamics {
    m: DMatrix<f64>,
    n: DMatrix<f64>,
    c: DVector<f64>,
}

impl DynamicsModel for LinearDynamics {
    fn state_dim(&self) -> usize {
        self.m.nrows()
    }

    fn component_dim(&self) -> usize {
        self.n.ncols()
    }

    fn eval(&self, _t: f64, x: &DVector<f64>, g: &DVector<f64>) -> DVector<f64> {
        &self.m * x + &self.n * g + &self.c
    }

    fn jacobian_x(&self, _t: f64, _x: &DVector<f64>, _g: &DVector<f64>) -> DMatrix<f64> {
        self.m.clone()
    }

    fn jacobian_g(&self, _t: f64, _x: &DVector<f64>, _g: &DVector<f64>) -> DMatrix<f64> {
        self.n.clone()
    }
}

struct LookupComponent {
    state_dim: usize,
    base: TableSignal,
    /// Scaled additive deviation, present only on the perturbed side.
    bump: Option<(f64, TableSignal)>,
}

impl ComponentModel for LookupComponent {
    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn output_dim(&self) -> usize {
        self.base.dim()
    }

    fn eval(&self, t: f64, _x: &DVector<f64>) -> DVector<f64> {
        match &self.bump {
            Some((scale, table)) => self.base.value(t) + table.value(t) * *scale,
            None => self.base.value(t),
        }
    }

    fn jacobian_x(&self, _t: f64, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(self.base.dim(), self.state_dim)
    }
}

struct ScaledTableEnvelope {
    table: TableSignal,
    scale: f64,
}

impl ErrorEnvelope for ScaledTableEnvelope {
    fn output_dim(&self) -> usize {
        self.table.dim()
    }

    fn eval(&self, t: f64, _x: &DVector<f64>) -> DVector<f64> {
        self.table.value(t) * self.scale
    }
}

struct LinearTerminalQoi {
    w: DVector<f64>,
    component_dim: usize,
}

impl QoiModel for LinearTerminalQoi {
    fn state_dim(&self) -> usize {
        self.w.len()
    }

    fn component_dim(&self) -> usize {
        self.component_dim
    }

    fn terminal(&self, xf: &DVector<f64>) -> f64 {
        self.w.dot(xf)
    }

    fn terminal_gradient(&self, _xf: &DVector<f64>) -> DVector<f64> {
        self.w.clone()
    }

    fn running(&self, _t: f64, _x: &DVector<f64>, _g: &DVector<f64>) -> f64 {
        0.0
    }

    fn running_gradient_x(&self, _t: f64, _x: &DVector<f64>, _g: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(self.w.len())
    }

    fn running_gradient_g(&self, _t: f64, _x: &DVector<f64>, _g: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(self.component_dim)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn toy_json() -> String {
        r#"{
            "state_dim": 2,
            "component_dim": 1,
            "t0": 0.0,
            "tf": 1.0,
            "x0": [1.0, 0.0],
            "m": [[0.0, 1.0], [-1.0, 0.0]],
            "n": [[0.0], [1.0]],
            "c": [0.0, 0.0],
            "g_star": {"t": [0.0, 1.0], "values": [[0.5], [1.5]]},
            "deviation": {"t": [0.0, 1.0], "values": [[1.0], [-1.0]]},
            "envelope": {"t": [0.0, 0.5, 1.0], "values": [[1.0], [1.0], [1.0]]},
            "qoi_terminal": [1.0, 0.0]
        }"#
        .to_string()
    }

    fn load_toy(json: &str) -> Result<CustomSpec, CliError> {
        let dir = std::env::temp_dir().join(format!(
            "odesens-custom-test-{}-{:?}",
            std::process::id(),
            std::thread::current().id()
        ));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("spec.json");
        std::fs::write(&path, json).unwrap();
        CustomSpec::load(&path)
    }

    #[test]
    fn table_lookup_interpolates_and_clamps() {
        let spec = TableSpec {
            t: vec![0.0, 1.0, 3.0],
            values: vec![vec![1.0, 0.0], vec![3.0, 2.0], vec![3.0, -2.0]],
        };
        let sig = TableSignal::from_spec(&spec);
        assert_relative_eq!(sig.value(0.5)[0], 2.0);
        assert_relative_eq!(sig.value(0.5)[1], 1.0);
        assert_relative_eq!(sig.value(2.0)[1], 0.0);
        assert_relative_eq!(sig.value(-5.0)[0], 1.0);
        assert_relative_eq!(sig.value(9.0)[1], -2.0);
    }

    #[test]
    fn builds_epsilon_family() {
        let spec = load_toy(&toy_json()).unwrap();
        let p = spec.build(0.25);
        assert_eq!(p.epsilon, 0.25);
        let x = DVector::from_vec(vec![0.0, 0.0]);
        let g0 = p.g_star.eval(0.0, &x);
        let ge = p.g_eps.eval(0.0, &x);
        assert_relative_eq!(ge[0] - g0[0], 0.25, max_relative = 1e-14);
        let env = p.envelope.eval(0.5, &x);
        assert_relative_eq!(env[0], 0.25, max_relative = 1e-14);
        // Dynamics is x' = Mx + Ng + c with constant Jacobians.
        let g = DVector::from_vec(vec![2.0]);
        let xdot = p.dynamics.eval(0.0, &DVector::from_vec(vec![1.0, 3.0]), &g);
        assert_relative_eq!(xdot[0], 3.0);
        assert_relative_eq!(xdot[1], 1.0);
    }

    #[test]
    fn rejects_envelope_violations() {
        let json = toy_json().replace("\"values\": [[1.0], [-1.0]]", "\"values\": [[1.0], [-2.0]]");
        let err = load_toy(&json).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("envelope does not dominate"), "{msg}");
    }

    #[test]
    fn rejects_bad_shapes() {
        let json = toy_json().replace("\"x0\": [1.0, 0.0]", "\"x0\": [1.0]");
        assert!(load_toy(&json).is_err());
        let json = toy_json().replace("\"t\": [0.0, 1.0]", "\"t\": [1.0, 0.0]");
        assert!(load_toy(&json).is_err());
    }
}
