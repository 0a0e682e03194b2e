//! Terminal payoff specifications.
//!
//! Payoffs are scalar functions with a declared bound `|g| ≤ L` on the
//! evaluation window. Tabulated payoffs support either piecewise-linear
//! evaluation or a lower-semicontinuous step rule (between nodes the value is
//! the smaller neighbor), which reproduces indicator-type payoffs without
//! smearing their jumps upward.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PayoffKind {
    Call { strike: f64 },
    Put { strike: f64 },
    /// Indicator `1_{x ≥ strike}`.
    Digital { strike: f64 },
    /// `min(max(x, lo), hi)`.
    Clamp { lo: f64, hi: f64 },
    Tabulated { xs: Vec<f64>, values: Vec<f64>, lsc: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayoffSpec {
    #[serde(flatten)]
    pub kind: PayoffKind,
    /// Declared bound `L` with `|g| ≤ L` on the evaluation window.
    pub bound: f64,
}

impl PayoffSpec {
    pub fn digital(strike: f64) -> Self {
        Self { kind: PayoffKind::Digital { strike }, bound: 1.0 }
    }

    pub fn clamp(lo: f64, hi: f64) -> Self {
        Self { kind: PayoffKind::Clamp { lo, hi }, bound: lo.abs().max(hi.abs()) }
    }

    pub fn call(strike: f64, bound: f64) -> Self {
        Self { kind: PayoffKind::Call { strike }, bound }
    }

    pub fn put(strike: f64) -> Self {
        Self { kind: PayoffKind::Put { strike }, bound: strike.abs() }
    }

    pub fn tabulated(xs: Vec<f64>, values: Vec<f64>, lsc: bool, bound: f64) -> Self {
        Self { kind: PayoffKind::Tabulated { xs, values, lsc }, bound }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match &self.kind {
            PayoffKind::Call { strike } => (x - strike).max(0.0),
            PayoffKind::Put { strike } => (strike - x).max(0.0),
            PayoffKind::Digital { strike } => {
                if x >= *strike {
                    1.0
                } else {
                    0.0
                }
            }
            PayoffKind::Clamp { lo, hi } => x.clamp(*lo, *hi),
            PayoffKind::Tabulated { xs, values, lsc } => eval_table(xs, values, *lsc, x),
        }
    }

    /// Largest |g| over a sampled window; used by the probe tests.
    pub fn max_abs_on(&self, lo: f64, hi: f64, samples: usize) -> f64 {
        let n = samples.max(2);
        (0..n)
            .map(|i| {
                let x = lo + (hi - lo) * i as f64 / (n - 1) as f64;
                self.eval(x).abs()
            })
            .fold(0.0, f64::max)
    }
}

fn eval_table(xs: &[f64], values: &[f64], lsc: bool, x: f64) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    if x <= xs[0] {
        return values[0];
    }
    if x >= *xs.last().unwrap() {
        return *values.last().unwrap();
    }
    let j = xs.windows(2).position(|w| x < w[1]).unwrap_or(xs.len() - 2);
    if x == xs[j] {
        return values[j];
    }
    if lsc {
        values[j].min(values[j + 1])
    } else {
        let w = (x - xs[j]) / (xs[j + 1] - xs[j]);
        values[j] + w * (values[j + 1] - values[j])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms() {
        let d = PayoffSpec::digital(1.0);
        assert_eq!(d.eval(0.999), 0.0);
        assert_eq!(d.eval(1.0), 1.0);
        let c = PayoffSpec::clamp(0.0, 1.0);
        assert_eq!(c.eval(-3.0), 0.0);
        assert_eq!(c.eval(0.25), 0.25);
        assert_eq!(c.eval(9.0), 1.0);
        assert_eq!(PayoffSpec::call(1.0, 10.0).eval(1.5), 0.5);
        assert_eq!(PayoffSpec::put(1.0).eval(0.25), 0.75);
    }

    #[test]
    fn lsc_step_table_takes_lower_neighbor() {
        // down-jump indicator 1_{x < 1} tabulated on [0, 2]
        let xs: Vec<f64> = (0..=20).map(|i| i as f64 * 0.1).collect();
        let vs: Vec<f64> = xs.iter().map(|&x| if x < 1.0 { 1.0 } else { 0.0 }).collect();
        let g = PayoffSpec::tabulated(xs, vs, true, 1.0);
        assert_eq!(g.eval(0.45), 1.0);
        assert_eq!(g.eval(0.95), 0.0); // straddles the jump, lower neighbor wins
        assert_eq!(g.eval(0.9), 1.0); // node value
        assert_eq!(g.eval(1.0), 0.0);
        assert_eq!(g.eval(1.55), 0.0);
    }

    #[test]
    fn linear_table_interpolates() {
        let g = PayoffSpec::tabulated(vec![0.0, 1.0], vec![0.0, 2.0], false, 2.0);
        assert!((g.eval(0.25) - 0.5).abs() < 1e-15);
        assert_eq!(g.eval(-1.0), 0.0);
        assert_eq!(g.eval(5.0), 2.0);
    }
}
