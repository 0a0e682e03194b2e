//! Discrete BSDE solutions: stored time slices of (Y, Z), the nondecreasing
//! compensator track, and solver diagnostics.

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use serde::{Deserialize, Serialize};

/// How the state axis is discretized.
#[derive(Debug, Clone, PartialEq)]
pub enum Representation {
    Lattice { x_nodes: Vec<f64> },
    MonteCarlo { paths: usize },
}

/// One stored time slice. For a lattice solution `y[j]` lives on node `j`;
/// for Monte Carlo, on path `j`.
#[derive(Debug, Clone)]
pub struct TimeSlice {
    pub time: f64,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

/// Which times to keep. Backward sweeps over fine grids store only requested
/// slices; `All` is meant for coarse grids.
#[derive(Debug, Clone)]
pub enum SnapshotSpec {
    All,
    Times(Vec<f64>),
}

impl SnapshotSpec {
    pub(crate) fn wants(&self, grid: &TimeGrid, step: usize) -> bool {
        match self {
            SnapshotSpec::All => true,
            SnapshotSpec::Times(ts) => {
                // always keep t0, the last interior step, and the terminal slice
                if step == 0 || step == grid.steps() || step + 1 == grid.steps() {
                    return true;
                }
                let t = grid.time(step);
                let h = grid.h();
                ts.iter().any(|&req| (req - t).abs() < 0.5 * h)
            }
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub picard_max_iters: usize,
    pub picard_total_iters: u64,
    /// Worst regression condition number (Monte Carlo backend only).
    pub regression_max_condition: f64,
    /// Monte Carlo standard-error proxy for the initial value.
    pub standard_error: f64,
}

/// Output of a backward solve.
#[derive(Debug, Clone)]
pub struct BsdeSolution {
    pub grid: TimeGrid,
    pub representation: Representation,
    /// Stored slices ordered by time (ascending).
    pub slices: Vec<TimeSlice>,
    /// Max compensator increment per step (all zero for unconstrained runs).
    pub step_max_compensator: Vec<f64>,
    pub diagnostics: SolveDiagnostics,
}

impl BsdeSolution {
    pub fn slice_at(&self, t: f64) -> Result<&TimeSlice> {
        let h = self.grid.h();
        self.slices
            .iter()
            .find(|s| (s.time - t).abs() < 0.5 * h)
            .ok_or_else(|| Error::InvalidInput(format!("no stored slice near t = {t}")))
    }

    /// Linear interpolation of a stored lattice slice.
    pub fn value_at(&self, t: f64, x: f64) -> Result<f64> {
        let slice = self.slice_at(t)?;
        match &self.representation {
            Representation::Lattice { x_nodes } => Ok(interp_uniform(x_nodes, &slice.y, x)),
            Representation::MonteCarlo { .. } => Err(Error::InvalidInput(
                "pointwise evaluation needs the lattice representation".into(),
            )),
        }
    }

    /// Y at the initial datum. Lattice: interpolated at `x0`; Monte Carlo:
    /// the (constant) regression value on the initial slice.
    pub fn initial_value(&self, x0: f64) -> f64 {
        let slice = &self.slices[0];
        match &self.representation {
            Representation::Lattice { x_nodes } => interp_uniform(x_nodes, &slice.y, x0),
            Representation::MonteCarlo { .. } => {
                slice.y.iter().sum::<f64>() / slice.y.len() as f64
            }
        }
    }

    pub fn terminal_slice(&self) -> &TimeSlice {
        self.slices.last().expect("solution stores the terminal slice")
    }

    /// The stored slice one step before the horizon.
    pub fn pre_terminal_slice(&self) -> Result<&TimeSlice> {
        let t = self.grid.time(self.grid.steps() - 1);
        self.slice_at(t)
    }
}

/// Linear interpolation on a uniform grid with linear extrapolation outside;
/// exact on globally affine data.
#[inline]
pub(crate) fn interp_uniform(xs: &[f64], vals: &[f64], q: f64) -> f64 {
    let dx = xs[1] - xs[0];
    let f = (q - xs[0]) / dx;
    let j = (f.floor() as i64).clamp(0, xs.len() as i64 - 2) as usize;
    let w = f - j as f64;
    vals[j] * (1.0 - w) + vals[j + 1] * w
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolation_is_exact_on_affine_data() {
        let xs: Vec<f64> = (0..11).map(|i| i as f64 * 0.1).collect();
        let vs: Vec<f64> = xs.iter().map(|x| 2.0 * x - 0.3).collect();
        for q in [-0.5, 0.0, 0.05, 0.37, 1.0, 1.7] {
            assert!((interp_uniform(&xs, &vs, q) - (2.0 * q - 0.3)).abs() < 1e-12);
        }
    }
}
