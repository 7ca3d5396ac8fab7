//! Grid-aligned state trajectories and matrix-valued signals.

use crate::error::{OdeSensError, Result};
use crate::grid::TimeGrid;
use nalgebra::{DMatrix, DVector};

/// States sampled on a time grid, optionally with matching derivative samples.
///
/// Between nodes the trajectory evaluates as a cubic Hermite interpolant when
/// derivatives are stored, and as a piecewise-linear interpolant otherwise.
#[derive(Debug, Clone)]
pub struct Trajectory {
    grid: TimeGrid,
    states: Vec<DVector<f64>>,
    derivs: Option<Vec<DVector<f64>>>,
}

impl Trajectory {
    pub fn new(
        grid: TimeGrid,
        states: Vec<DVector<f64>>,
        derivs: Option<Vec<DVector<f64>>>,
    ) -> Result<Self> {
        if states.len() != grid.len() {
            return Err(OdeSensError::DimensionMismatch {
                context: "Trajectory states".into(),
                expected: format!("{} samples", grid.len()),
                actual: format!("{}", states.len()),
            });
        }
        let dim = states[0].len();
        if states.iter().any(|s| s.len() != dim) {
            return Err(OdeSensError::DimensionMismatch {
                context: "Trajectory states".into(),
                expected: format!("uniform state dimension {dim}"),
                actual: "ragged samples".into(),
            });
        }
        if let Some(d) = &derivs {
            if d.len() != states.len() || d.iter().any(|v| v.len() != dim) {
                return Err(OdeSensError::DimensionMismatch {
                    context: "Trajectory derivs".into(),
                    expected: format!("{} samples of dimension {dim}", states.len()),
                    actual: format!("{} samples", d.len()),
                });
            }
        }
        Ok(Self {
            grid,
            states,
            derivs,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn states(&self) -> &[DVector<f64>] {
        &self.states
    }

    pub fn derivs(&self) -> Option<&[DVector<f64>]> {
        self.derivs.as_deref()
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn state(&self, i: usize) -> &DVector<f64> {
        &self.states[i]
    }

    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().unwrap()
    }

    /// Interpolated state at `t`. Exact at nodes; errors outside the span.
    pub fn interpolate(&self, t: f64) -> Result<DVector<f64>> {
        let i = self.grid.bracket(t)?;
        let (t0, t1) = (self.grid.nodes()[i], self.grid.nodes()[i + 1]);
        let h = t1 - t0;
        let theta = ((t.clamp(self.grid.t0(), self.grid.tf())) - t0) / h;
        let (x0, x1) = (&self.states[i], &self.states[i + 1]);
        match &self.derivs {
            Some(d) => {
                // Cubic Hermite basis in theta; reproduces cubics exactly.
                let th2 = theta * theta;
                let th3 = th2 * theta;
                let h00 = 2.0 * th3 - 3.0 * th2 + 1.0;
                let h10 = th3 - 2.0 * th2 + theta;
                let h01 = -2.0 * th3 + 3.0 * th2;
                let h11 = th3 - th2;
                Ok(x0 * h00 + &d[i] * (h10 * h) + x1 * h01 + &d[i + 1] * (h11 * h))
            }
            None => Ok(x0 * (1.0 - theta) + x1 * theta),
        }
    }

    /// Time derivative of the interpolant at `t`.
    pub fn interpolate_deriv(&self, t: f64) -> Result<DVector<f64>> {
        let i = self.grid.bracket(t)?;
        let (t0, t1) = (self.grid.nodes()[i], self.grid.nodes()[i + 1]);
        let h = t1 - t0;
        let theta = ((t.clamp(self.grid.t0(), self.grid.tf())) - t0) / h;
        let (x0, x1) = (&self.states[i], &self.states[i + 1]);
        match &self.derivs {
            Some(d) => {
                let th2 = theta * theta;
                let dh00 = (6.0 * th2 - 6.0 * theta) / h;
                let dh10 = 3.0 * th2 - 4.0 * theta + 1.0;
                let dh01 = (-6.0 * th2 + 6.0 * theta) / h;
                let dh11 = 3.0 * th2 - 2.0 * theta;
                Ok(x0 * dh00 + &d[i] * dh10 + x1 * dh01 + &d[i + 1] * dh11)
            }
            None => Ok((x1 - x0) / h),
        }
    }

    /// Resamples onto `grid` via the interpolant; derivatives come from the
    /// interpolant's derivative so the result stays self-consistent.
    pub fn resample(&self, grid: TimeGrid) -> Result<Trajectory> {
        let mut states = Vec::with_capacity(grid.len());
        let mut derivs = Vec::with_capacity(grid.len());
        for &t in grid.nodes() {
            states.push(self.interpolate(t)?);
            derivs.push(self.interpolate_deriv(t)?);
        }
        Trajectory::new(grid, states, Some(derivs))
    }

    /// Node-wise difference `self - other` on a shared grid.
    pub fn difference(&self, other: &Trajectory) -> Result<Trajectory> {
        if self.grid != other.grid {
            return Err(OdeSensError::Validation(
                "trajectory difference requires identical grids".into(),
            ));
        }
        if self.dim() != other.dim() {
            return Err(OdeSensError::DimensionMismatch {
                context: "trajectory difference".into(),
                expected: format!("dimension {}", self.dim()),
                actual: format!("{}", other.dim()),
            });
        }
        let states = self
            .states
            .iter()
            .zip(&other.states)
            .map(|(a, b)| a - b)
            .collect();
        let derivs = match (&self.derivs, &other.derivs) {
            (Some(da), Some(db)) => Some(da.iter().zip(db).map(|(a, b)| a - b).collect()),
            _ => None,
        };
        Trajectory::new(self.grid.clone(), states, derivs)
    }
}

/// Matrix samples on a time grid, evaluated between nodes by linear interpolation.
#[derive(Debug, Clone)]
pub struct MatrixSignal {
    grid: TimeGrid,
    values: Vec<DMatrix<f64>>,
}

impl MatrixSignal {
    pub fn new(grid: TimeGrid, values: Vec<DMatrix<f64>>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(OdeSensError::DimensionMismatch {
                context: "MatrixSignal".into(),
                expected: format!("{} samples", grid.len()),
                actual: format!("{}", values.len()),
            });
        }
        let shape = values[0].shape();
        if values.iter().any(|m| m.shape() != shape) {
            return Err(OdeSensError::DimensionMismatch {
                context: "MatrixSignal".into(),
                expected: format!("uniform shape {shape:?}"),
                actual: "ragged samples".into(),
            });
        }
        Ok(Self { grid, values })
    }

    /// Constant signal on a grid.
    pub fn constant(grid: TimeGrid, value: DMatrix<f64>) -> Self {
        let values = vec![value; grid.len()];
        Self { grid, values }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[DMatrix<f64>] {
        &self.values
    }

    pub fn value(&self, i: usize) -> &DMatrix<f64> {
        &self.values[i]
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values[0].shape()
    }

    /// Linear interpolation between node samples; exact at nodes.
    pub fn value_at(&self, t: f64) -> Result<DMatrix<f64>> {
        let i = self.grid.bracket(t)?;
        let (t0, t1) = (self.grid.nodes()[i], self.grid.nodes()[i + 1]);
        let theta = ((t.clamp(self.grid.t0(), self.grid.tf())) - t0) / (t1 - t0);
        Ok(&self.values[i] * (1.0 - theta) + &self.values[i + 1] * theta)
    }
}

/// Vector samples on a grid with linear interpolation; used for forcing terms.
#[derive(Debug, Clone)]
pub struct VectorSignal {
    grid: TimeGrid,
    values: Vec<DVector<f64>>,
}

impl VectorSignal {
    pub fn new(grid: TimeGrid, values: Vec<DVector<f64>>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(OdeSensError::DimensionMismatch {
                context: "VectorSignal".into(),
                expected: format!("{} samples", grid.len()),
                actual: format!("{}", values.len()),
            });
        }
        let dim = values[0].len();
        if values.iter().any(|v| v.len() != dim) {
            return Err(OdeSensError::DimensionMismatch {
                context: "VectorSignal".into(),
                expected: format!("uniform dimension {dim}"),
                actual: "ragged samples".into(),
            });
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[DVector<f64>] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn value_at(&self, t: f64) -> Result<DVector<f64>> {
        let i = self.grid.bracket(t)?;
        let (t0, t1) = (self.grid.nodes()[i], self.grid.nodes()[i + 1]);
        let theta = ((t.clamp(self.grid.t0(), self.grid.tf())) - t0) / (t1 - t0);
        Ok(&self.values[i] * (1.0 - theta) + &self.values[i + 1] * theta)
    }
}
