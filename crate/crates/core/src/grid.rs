//! Time grids and trapezoid quadrature over grid-aligned samples.

use crate::error::{OdeSensError, Result};

/// Strictly increasing sequence of time nodes spanning one interval.
///
/// Grids are immutable after construction; every routine that consumes
/// grid-aligned samples validates lengths against `len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    nodes: Vec<f64>,
}

impl TimeGrid {
    /// Builds a grid from explicit nodes. At least two nodes, strictly increasing, all finite.
    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(OdeSensError::InvalidGrid(format!(
                "need at least 2 nodes, got {}",
                nodes.len()
            )));
        }
        for (i, w) in nodes.windows(2).enumerate() {
            if !w[0].is_finite() || !w[1].is_finite() {
                return Err(OdeSensError::InvalidGrid(format!(
                    "non-finite node near index {i}"
                )));
            }
            if w[1] <= w[0] {
                return Err(OdeSensError::InvalidGrid(format!(
                    "nodes not strictly increasing at index {}: {} then {}",
                    i, w[0], w[1]
                )));
            }
        }
        Ok(Self { nodes })
    }

    /// Uniform grid with `n` intervals (`n + 1` nodes) on `[t0, tf]`.
    pub fn uniform(t0: f64, tf: f64, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(OdeSensError::InvalidGrid(
                "uniform grid needs at least 1 interval".into(),
            ));
        }
        if !(tf > t0) {
            return Err(OdeSensError::InvalidGrid(format!(
                "need tf > t0, got [{t0}, {tf}]"
            )));
        }
        let h = (tf - t0) / n as f64;
        let mut nodes: Vec<f64> = (0..=n).map(|i| t0 + h * i as f64).collect();
        // Pin the endpoint so span queries are exact.
        nodes[n] = tf;
        Self::from_nodes(nodes)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Number of nodes (intervals + 1).
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of intervals.
    pub fn intervals(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn t0(&self) -> f64 {
        self.nodes[0]
    }

    pub fn tf(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    pub fn span(&self) -> f64 {
        self.tf() - self.t0()
    }

    /// Index of the interval containing `t`, clamping queries within
    /// roundoff slack of the span to the boundary intervals.
    pub fn bracket(&self, t: f64) -> Result<usize> {
        let slack = 1e-12 * self.span().max(1.0);
        if t < self.t0() - slack || t > self.tf() + slack {
            return Err(OdeSensError::OutOfRange {
                t,
                t0: self.t0(),
                tf: self.tf(),
            });
        }
        let t = t.clamp(self.t0(), self.tf());
        // partition_point returns the first node strictly greater than t.
        let k = self.nodes.partition_point(|&node| node <= t);
        Ok(k.clamp(1, self.nodes.len() - 1) - 1)
    }

    /// Trapezoid weights w_i with `sum_i w_i s_i = quadrature(grid, s)`.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let n = self.nodes.len();
        let mut w = vec![0.0; n];
        for i in 0..n - 1 {
            let h = self.nodes[i + 1] - self.nodes[i];
            w[i] += 0.5 * h;
            w[i + 1] += 0.5 * h;
        }
        w
    }
}

/// Trapezoid rule over node-aligned scalar samples.
pub fn quadrature(grid: &TimeGrid, samples: &[f64]) -> Result<f64> {
    if samples.len() != grid.len() {
        return Err(OdeSensError::DimensionMismatch {
            context: "quadrature".into(),
            expected: format!("{} samples", grid.len()),
            actual: format!("{}", samples.len()),
        });
    }
    let mut acc = 0.0;
    for i in 0..grid.intervals() {
        let h = grid.nodes()[i + 1] - grid.nodes()[i];
        acc += 0.5 * h * (samples[i] + samples[i + 1]);
    }
    Ok(acc)
}

/// Cumulative trapezoid integral: entry `i` holds the integral from `t0` to `t_i`.
pub fn cumulative_quadrature(grid: &TimeGrid, samples: &[f64]) -> Result<Vec<f64>> {
    if samples.len() != grid.len() {
        return Err(OdeSensError::DimensionMismatch {
            context: "cumulative_quadrature".into(),
            expected: format!("{} samples", grid.len()),
            actual: format!("{}", samples.len()),
        });
    }
    let mut out = Vec::with_capacity(grid.len());
    out.push(0.0);
    let mut acc = 0.0;
    for i in 0..grid.intervals() {
        let h = grid.nodes()[i + 1] - grid.nodes()[i];
        acc += 0.5 * h * (samples[i] + samples[i + 1]);
        out.push(acc);
    }
    Ok(out)
}
