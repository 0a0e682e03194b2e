//! Face-lifting: the sup-convolution
//!
//! ```text
//! ĝ(x) = sup_u ( g(x + u) − δ_T(u) ),
//! ```
//!
//! which is the effective terminal condition of the constrained problem, plus
//! the self-face-lift test used on value functions in the parabolic interior.
//!
//! The unbounded sup is turned into a certified finite search: when `K_base`
//! contains a centered ball of radius ρ, `δ_T(u) ≥ ρ·s(T)·|u|`, and `|g| ≤ L`
//! confines every maximizer to `|u| ≤ 2L/(ρ·s(T))`. Bases with ρ = 0 (the
//! half-line cone) need an explicit user radius and are flagged uncertified.

use crate::constraint::{ConstraintFamily, SupportValue};
use crate::error::{Error, Result};
use crate::payoff::PayoffSpec;
use serde::{Deserialize, Serialize};

/// Options for the tabulated face-lift.
#[derive(Debug, Clone, Default)]
pub struct FaceliftOptions {
    /// Search radius override; mandatory when no radius can be certified.
    pub u_radius: Option<f64>,
    /// Search step; defaults to half the x-grid step.
    pub u_step: Option<f64>,
    /// Scale applied to the displacement inside the payoff argument
    /// (`g(x + scale·u) − δ_T(u)`); identity in gains mode, `σ_T` in
    /// direct-constraint mode with constant volatility.
    pub terminal_scale: Option<f64>,
}

/// Tabulated face-lift with the metadata the downstream modules need.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FaceliftedPayoff {
    pub x_grid: Vec<f64>,
    /// Raw payoff at the nodes.
    pub payoff: Vec<f64>,
    /// Face-lifted values at the nodes.
    pub values: Vec<f64>,
    pub lipschitz_estimate: f64,
    pub search_radius: f64,
    /// `‖FL(FL(g)) − FL(g)‖∞` on the grid.
    pub residual_idempotence: f64,
    /// False when the search radius could not be certified from the
    /// inscribed-ball bound and a user radius was used instead.
    pub radius_certified: bool,
}

impl FaceliftedPayoff {
    /// Piecewise-linear evaluation with constant extension outside the grid.
    pub fn eval(&self, x: f64) -> f64 {
        let xs = &self.x_grid;
        if x <= xs[0] {
            return self.values[0];
        }
        if x >= *xs.last().unwrap() {
            return *self.values.last().unwrap();
        }
        let dx = xs[1] - xs[0];
        let j = (((x - xs[0]) / dx) as usize).min(xs.len() - 2);
        let w = (x - xs[j]) / dx;
        self.values[j] * (1.0 - w) + self.values[j + 1] * w
    }

    pub fn grid_step(&self) -> f64 {
        self.x_grid[1] - self.x_grid[0]
    }
}

/// Outcome of the self-face-lift residual test.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelfFaceliftCheck {
    pub passed: bool,
    pub max_residual: f64,
}

/// Uniform grid helper.
pub fn uniform_grid(lo: f64, hi: f64, nodes: usize) -> Result<Vec<f64>> {
    if !(lo.is_finite() && hi.is_finite()) || hi <= lo || nodes < 2 {
        return Err(Error::InvalidInput(format!(
            "bad x-grid: [{lo}, {hi}] with {nodes} nodes"
        )));
    }
    let dx = (hi - lo) / (nodes - 1) as f64;
    Ok((0..nodes).map(|i| lo + dx * i as f64).collect())
}

/// Tabulate `ĝ` on `x_grid`.
pub fn facelift(
    g: &PayoffSpec,
    family: &ConstraintFamily,
    x_grid: &[f64],
    opts: &FaceliftOptions,
) -> Result<FaceliftedPayoff> {
    if family.dim != 1 {
        return Err(Error::UnsupportedConstraint(
            "tabulated face-lifts are one-dimensional".into(),
        ));
    }
    if x_grid.len() < 2 {
        return Err(Error::InvalidInput("x-grid needs at least two nodes".into()));
    }
    let horizon = family.horizon();
    let s_end = family.shrink.eval(horizon);
    let rho = family.inscribed_radius_base() * s_end;
    let certified = if rho > 0.0 { Some(2.0 * g.bound / rho) } else { None };
    let (radius, radius_certified) = match (opts.u_radius, certified) {
        (Some(r), Some(c)) => {
            if r < c {
                return Err(Error::InsufficientSearchRadius { supplied: r, required: c });
            }
            (r, true)
        }
        (Some(r), None) => (r, false),
        (None, Some(c)) => (c, true),
        (None, None) => {
            return Err(Error::InsufficientSearchRadius { supplied: 0.0, required: f64::INFINITY })
        }
    };

    let dx = x_grid[1] - x_grid[0];
    let du = opts.u_step.unwrap_or(dx / 2.0);
    if !(du > 0.0) || radius <= 0.0 {
        return Err(Error::InvalidInput("face-lift search grid is empty".into()));
    }
    let scale = opts.terminal_scale.unwrap_or(1.0);

    // Displacements and their support values, infinite directions dropped.
    let m = (radius / du).ceil() as i64;
    let mut shifts: Vec<(f64, f64)> = Vec::with_capacity((2 * m + 1) as usize);
    for k in -m..=m {
        let u = k as f64 * du;
        match family.support1(horizon, u)? {
            SupportValue::Finite(d) => shifts.push((u, d)),
            SupportValue::Infinite => {}
        }
    }
    if shifts.is_empty() {
        return Err(Error::InvalidInput("face-lift search grid is empty".into()));
    }

    let payoff: Vec<f64> = x_grid.iter().map(|&x| g.eval(x)).collect();
    let values = lift_with(&shifts, scale, x_grid, |x| Some(g.eval(x)));

    // Second lift of the tabulated result, displacements clamped to the grid.
    let lo = x_grid[0];
    let hi = *x_grid.last().unwrap();
    let interp = |x: f64| -> Option<f64> {
        if x < lo - 1e-12 || x > hi + 1e-12 {
            return None;
        }
        let j = (((x - lo) / dx) as usize).min(x_grid.len() - 2);
        let w = ((x - x_grid[j]) / dx).clamp(0.0, 1.0);
        Some(values[j] * (1.0 - w) + values[j + 1] * w)
    };
    let second = lift_with(&shifts, scale, x_grid, interp);
    let residual_idempotence = second
        .iter()
        .zip(&values)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    let lipschitz_estimate = values
        .windows(2)
        .map(|w| (w[1] - w[0]).abs() / dx)
        .fold(0.0, f64::max);

    Ok(FaceliftedPayoff {
        x_grid: x_grid.to_vec(),
        payoff,
        values,
        lipschitz_estimate,
        search_radius: radius,
        residual_idempotence,
        radius_certified,
    })
}

fn lift_with(
    shifts: &[(f64, f64)],
    scale: f64,
    x_grid: &[f64],
    eval: impl Fn(f64) -> Option<f64>,
) -> Vec<f64> {
    x_grid
        .iter()
        .map(|&x| {
            let mut best = f64::NEG_INFINITY;
            for &(u, d) in shifts {
                if let Some(gv) = eval(x + scale * u) {
                    let v = gv - d;
                    if v > best {
                        best = v;
                    }
                }
            }
            best
        })
        .collect()
}

/// Residual of the self-face-lift identity for a tabulated function `v`:
/// `max over grid pairs of (v(x+u) − δ_t(u) − v(x))⁺`.
pub fn is_selffacelifted(
    x_grid: &[f64],
    values: &[f64],
    family: &ConstraintFamily,
    t: f64,
    tol: f64,
) -> Result<SelfFaceliftCheck> {
    if x_grid.len() != values.len() || x_grid.len() < 2 {
        return Err(Error::InvalidInput("self-face-lift: bad tabulation".into()));
    }
    // Cap the pair count; stride both endpoints identically so u stays on-grid.
    let n = x_grid.len();
    let stride = (n / 512).max(1);
    let mut residual: f64 = 0.0;
    for i in (0..n).step_by(stride) {
        for j in (0..n).step_by(stride) {
            if i == j {
                continue;
            }
            let u = x_grid[j] - x_grid[i];
            let d = match family.support1(t, u)? {
                SupportValue::Finite(d) => d,
                SupportValue::Infinite => continue,
            };
            residual = residual.max(values[j] - d - values[i]);
        }
    }
    let residual = residual.max(0.0);
    Ok(SelfFaceliftCheck { passed: residual <= tol, max_residual: residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraint::{ConstraintBase, ShrinkSchedule};

    fn box11() -> ConstraintFamily {
        ConstraintFamily::boxed(vec![-1.0], vec![1.0], 1.0).unwrap()
    }

    #[test]
    fn digital_box_matches_clamp_and_brute_force() {
        let g = PayoffSpec::digital(1.0);
        let fam = box11();
        let grid = uniform_grid(-3.0, 3.0, 601).unwrap();
        let fl = facelift(&g, &fam, &grid, &FaceliftOptions::default()).unwrap();
        assert!(fl.radius_certified);
        assert!((fl.search_radius - 2.0).abs() < 1e-12);

        // independent dense brute force over u ∈ [-3, 3] step 1e-3
        for (k, &x) in grid.iter().enumerate().step_by(17) {
            let mut best = f64::NEG_INFINITY;
            let mut u = -3.0;
            while u <= 3.0 {
                let gv = if x + u >= 1.0 { 1.0 } else { 0.0 };
                best = best.max(gv - u.abs());
                u += 1e-3;
            }
            assert!(
                (fl.values[k] - best).abs() < 2e-3,
                "x={x}: lift {} vs brute {}",
                fl.values[k],
                best
            );
            assert!((fl.values[k] - x.clamp(0.0, 1.0)).abs() < 1e-9, "x={x}");
        }
        // exact grid alignment makes the clamp exact everywhere
        let max_err = grid
            .iter()
            .zip(&fl.values)
            .map(|(&x, &v)| (v - x.clamp(0.0, 1.0)).abs())
            .fold(0.0, f64::max);
        assert!(max_err < 1e-12, "max clamp error {max_err}");
        assert!((fl.lipschitz_estimate - 1.0).abs() < 1e-9);
        assert!(fl.residual_idempotence <= 2.0 * (grid[1] - grid[0]) * 0.5 * fl.lipschitz_estimate + 1e-12);
    }

    #[test]
    fn cone_footnote_payoff_lifts_to_one() {
        // 1_{x < 1} on the positive half-line under K = R_+
        let xs: Vec<f64> = (0..=300).map(|i| i as f64 * 0.01).collect();
        let vs: Vec<f64> = xs.iter().map(|&x| if x < 1.0 { 1.0 } else { 0.0 }).collect();
        let g = PayoffSpec::tabulated(xs.clone(), vs, true, 1.0);
        let fam = ConstraintFamily::new(
            ConstraintBase::HalfLineCone { direction: vec![1.0] },
            ShrinkSchedule::flat(1.0),
            1,
        )
        .unwrap();
        let opts = FaceliftOptions { u_radius: Some(3.0), ..Default::default() };
        let fl = facelift(&g, &fam, &xs, &opts).unwrap();
        assert!(!fl.radius_certified);
        for (k, &x) in xs.iter().enumerate() {
            assert_eq!(fl.values[k], 1.0, "x={x}");
        }
        assert_eq!(fl.residual_idempotence, 0.0);
    }

    #[test]
    fn cone_without_user_radius_is_an_error() {
        let g = PayoffSpec::digital(1.0);
        let fam = ConstraintFamily::new(
            ConstraintBase::HalfLineCone { direction: vec![1.0] },
            ShrinkSchedule::flat(1.0),
            1,
        )
        .unwrap();
        let grid = uniform_grid(0.0, 2.0, 11).unwrap();
        assert!(matches!(
            facelift(&g, &fam, &grid, &FaceliftOptions::default()),
            Err(Error::InsufficientSearchRadius { .. })
        ));
    }

    #[test]
    fn radius_below_certified_is_an_error() {
        let g = PayoffSpec::digital(1.0);
        let grid = uniform_grid(-3.0, 3.0, 61).unwrap();
        let opts = FaceliftOptions { u_radius: Some(1.0), ..Default::default() };
        assert!(matches!(
            facelift(&g, &box11(), &grid, &opts),
            Err(Error::InsufficientSearchRadius { .. })
        ));
    }

    #[test]
    fn constant_payoff_is_fixed() {
        let g = PayoffSpec::clamp(0.7, 0.7);
        let grid = uniform_grid(-2.0, 2.0, 101).unwrap();
        let fl = facelift(&g, &box11(), &grid, &FaceliftOptions::default()).unwrap();
        for &v in &fl.values {
            assert!((v - 0.7).abs() < 1e-14);
        }
        assert_eq!(fl.residual_idempotence, 0.0);
    }

    #[test]
    fn dominance_and_static_two_sided_bound() {
        let g = PayoffSpec::digital(1.0);
        let fam = box11();
        let grid = uniform_grid(-3.0, 3.0, 301).unwrap();
        let fl = facelift(&g, &fam, &grid, &FaceliftOptions::default()).unwrap();
        for k in 0..grid.len() {
            assert!(fl.values[k] >= fl.payoff[k] - 1e-14);
        }
        // -δ_T(x'-x) ≤ ĝ(x) - ĝ(x') ≤ δ_T(x-x') over sampled pairs
        for i in (0..grid.len()).step_by(7) {
            for j in (0..grid.len()).step_by(11) {
                let d_ij = fam.support1(1.0, grid[i] - grid[j]).unwrap().finite().unwrap();
                let d_ji = fam.support1(1.0, grid[j] - grid[i]).unwrap().finite().unwrap();
                let diff = fl.values[i] - fl.values[j];
                assert!(diff <= d_ij + 1e-10);
                assert!(diff >= -d_ji - 1e-10);
            }
        }
    }

    #[test]
    fn smaller_constraint_lifts_higher() {
        let g = PayoffSpec::digital(1.0);
        let tight = ConstraintFamily::boxed(vec![-0.5], vec![0.5], 1.0).unwrap();
        let wide = box11();
        let grid = uniform_grid(-3.0, 3.0, 301).unwrap();
        let opts = FaceliftOptions { u_radius: Some(4.0), ..Default::default() };
        let fl_tight = facelift(&g, &tight, &grid, &opts).unwrap();
        let fl_wide = facelift(&g, &wide, &grid, &opts).unwrap();
        // K_tight ⊆ K_wide means δ_tight ≤ δ_wide, so the tight lift dominates
        for k in 0..grid.len() {
            assert!(fl_tight.values[k] >= fl_wide.values[k] - 1e-12);
        }
    }

    #[test]
    fn self_facelift_checks() {
        let fam = box11();
        let grid = uniform_grid(-2.0, 2.0, 201).unwrap();
        let clamp: Vec<f64> = grid.iter().map(|&x| x.clamp(0.0, 1.0)).collect();
        let ok = is_selffacelifted(&grid, &clamp, &fam, 0.5, 1e-10).unwrap();
        assert!(ok.passed, "residual {}", ok.max_residual);
        assert_eq!(ok.max_residual, 0.0);

        let steep: Vec<f64> = grid.iter().map(|&x| 2.0 * x).collect();
        let bad = is_selffacelifted(&grid, &steep, &fam, 0.5, 1e-10).unwrap();
        assert!(!bad.passed);
        assert!(bad.max_residual > 0.5);

        let constant: Vec<f64> = grid.iter().map(|_| 0.3).collect();
        let c = is_selffacelifted(&grid, &constant, &fam, 0.5, 1e-12).unwrap();
        assert!(c.passed);
        assert_eq!(c.max_residual, 0.0);
    }
}
