//! Piecewise-constant drift control policies on the solver time grid.
//!
//! A policy holds one value per grid interval `(t_i, t_{i+1}]` — the "simple"
//! controls that bridge the strong and weak dual formulations — either as a
//! plain per-interval sequence or as a per-interval lookup table over state
//! bins (feedback variant). The solvers are one-dimensional, so values are
//! scalars.

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PolicyValues {
    /// `ν_i` on `(t_i, t_{i+1}]`.
    PerInterval(Vec<f64>),
    /// Per interval, per state bin. `bin_edges` are the interior edges, so a
    /// table row has `bin_edges.len() + 1` entries.
    Feedback { bin_edges: Vec<f64>, table: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlPolicy {
    pub grid: TimeGrid,
    pub values: PolicyValues,
}

impl ControlPolicy {
    pub fn new(grid: TimeGrid, values: PolicyValues) -> Result<Self> {
        let ok = match &values {
            PolicyValues::PerInterval(v) => {
                v.len() == grid.steps() && v.iter().all(|x| x.is_finite())
            }
            PolicyValues::Feedback { bin_edges, table } => {
                table.len() == grid.steps()
                    && bin_edges.windows(2).all(|w| w[1] > w[0])
                    && table.iter().all(|row| {
                        row.len() == bin_edges.len() + 1 && row.iter().all(|x| x.is_finite())
                    })
            }
        };
        if !ok {
            return Err(Error::InvalidInput(
                "control policy values do not match the grid (or are not finite)".into(),
            ));
        }
        Ok(Self { grid, values })
    }

    pub fn zero(grid: TimeGrid) -> Self {
        let n = grid.steps();
        Self { grid, values: PolicyValues::PerInterval(vec![0.0; n]) }
    }

    pub fn constant(grid: TimeGrid, c: f64) -> Self {
        let n = grid.steps();
        Self { grid, values: PolicyValues::PerInterval(vec![c; n]) }
    }

    /// Control value on interval `i` at state `x`.
    #[inline]
    pub fn value_at(&self, interval: usize, x: f64) -> f64 {
        match &self.values {
            PolicyValues::PerInterval(v) => v[interval.min(v.len() - 1)],
            PolicyValues::Feedback { bin_edges, table } => {
                let row = &table[interval.min(table.len() - 1)];
                let bin = bin_edges.partition_point(|&e| x >= e);
                row[bin]
            }
        }
    }

    /// True when the control does not depend on the state.
    pub fn is_deterministic(&self) -> bool {
        matches!(self.values, PolicyValues::PerInterval(_))
    }

    pub fn max_abs(&self) -> f64 {
        match &self.values {
            PolicyValues::PerInterval(v) => v.iter().fold(0.0, |a, &x| a.max(x.abs())),
            PolicyValues::Feedback { table, .. } => table
                .iter()
                .flat_map(|r| r.iter())
                .fold(0.0, |a, &x| a.max(x.abs())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn per_interval_lookup() {
        let grid = TimeGrid::new(0.0, 1.0, 4).unwrap();
        let p = ControlPolicy::new(grid, PolicyValues::PerInterval(vec![1.0, -2.0, 3.0, 0.0])).unwrap();
        assert_eq!(p.value_at(1, 99.0), -2.0);
        assert_eq!(p.max_abs(), 3.0);
        assert!(p.is_deterministic());
    }

    #[test]
    fn feedback_lookup() {
        let grid = TimeGrid::new(0.0, 1.0, 2).unwrap();
        let p = ControlPolicy::new(
            grid,
            PolicyValues::Feedback {
                bin_edges: vec![0.0, 1.0],
                table: vec![vec![-1.0, 0.0, 1.0], vec![-2.0, 0.0, 2.0]],
            },
        )
        .unwrap();
        assert_eq!(p.value_at(0, -0.5), -1.0);
        assert_eq!(p.value_at(0, 0.5), 0.0);
        assert_eq!(p.value_at(1, 1.5), 2.0);
        assert!(!p.is_deterministic());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let grid = TimeGrid::new(0.0, 1.0, 3).unwrap();
        assert!(ControlPolicy::new(grid, PolicyValues::PerInterval(vec![0.0; 2])).is_err());
    }
}
