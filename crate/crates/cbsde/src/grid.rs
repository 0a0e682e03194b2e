//! Uniform time grids.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Uniform grid `t_0 < t_1 < ... < t_N = T` used by the forward simulation and
/// every backward solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t0: f64,
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, horizon: f64, steps: usize) -> Result<Self> {
        if !(t0.is_finite() && horizon.is_finite()) || horizon <= t0 {
            return Err(Error::InvalidInput(format!(
                "bad time grid: t0={t0}, horizon={horizon}"
            )));
        }
        if steps == 0 {
            return Err(Error::InvalidInput("time grid needs at least one step".into()));
        }
        Ok(Self { t0, horizon, steps })
    }

    #[inline]
    pub fn t0(&self) -> f64 {
        self.t0
    }

    /// Terminal time `T`.
    #[inline]
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    #[inline]
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Step length `h = (T - t0) / N`.
    #[inline]
    pub fn h(&self) -> f64 {
        (self.horizon - self.t0) / self.steps as f64
    }

    /// `t_i`, exact at both ends.
    #[inline]
    pub fn time(&self, i: usize) -> f64 {
        if i >= self.steps {
            self.horizon
        } else {
            self.t0 + self.h() * i as f64
        }
    }

    /// Index of the grid time closest to `t`.
    pub fn index_of(&self, t: f64) -> usize {
        let i = ((t - self.t0) / self.h()).round();
        (i.max(0.0) as usize).min(self.steps)
    }

    /// Same span, `factor` times as many steps.
    pub fn refined(&self, factor: usize) -> Result<Self> {
        Self::new(self.t0, self.horizon, self.steps * factor.max(1))
    }

    /// Same span with a new step count.
    pub fn with_steps(&self, steps: usize) -> Result<Self> {
        Self::new(self.t0, self.horizon, steps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_exact() {
        let g = TimeGrid::new(0.25, 1.0, 3).unwrap();
        assert_eq!(g.time(0), 0.25);
        assert_eq!(g.time(3), 1.0);
        assert_eq!(g.index_of(1.0), 3);
        assert_eq!(g.index_of(0.25), 0);
    }

    #[test]
    fn rejects_degenerate() {
        assert!(TimeGrid::new(1.0, 1.0, 4).is_err());
        assert!(TimeGrid::new(0.0, 1.0, 0).is_err());
    }
}
