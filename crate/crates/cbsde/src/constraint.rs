//! Time-indexed convex constraint families `K_t = s(t)·K_base` with their
//! support functions
//!
//! ```text
//! δ_t(u) = sup { k·u : k ∈ K_t },
//! ```
//!
//! Euclidean projection, and validity checks for the standing assumptions
//! (0 ∈ K_t, bounded union, non-increasing and left-continuous t ↦ δ_t(u)).
//!
//! Restricting the time dependence to a scalar shrink schedule makes
//! monotonicity and left-continuity hold by construction and keeps δ in
//! closed form for every supported base.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Convex base set. `HalfLineCone` exists only to reproduce the classical
/// cone face-lift example; it is never admissible for the solvers (its union
/// over time is unbounded).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "base", rename_all = "kebab-case")]
pub enum ConstraintBase {
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Ball { radius: f64 },
    HalfLineCone { direction: Vec<f64> },
}

/// Piecewise-linear shrink schedule `s: [0, T] → (0, 1]`, tabulated at knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShrinkSchedule {
    /// `(t, s(t))` pairs with strictly increasing times covering `[0, T]`.
    pub knots: Vec<(f64, f64)>,
}

impl ShrinkSchedule {
    /// Constant schedule `s ≡ 1` on `[0, horizon]`.
    pub fn flat(horizon: f64) -> Self {
        Self { knots: vec![(0.0, 1.0), (horizon, 1.0)] }
    }

    pub fn horizon(&self) -> f64 {
        self.knots.last().map(|k| k.0).unwrap_or(0.0)
    }

    /// Linear interpolation between knots; constant extension outside.
    pub fn eval(&self, t: f64) -> f64 {
        match self.knots.len() {
            0 => 1.0,
            1 => self.knots[0].1,
            _ => {
                if t <= self.knots[0].0 {
                    return self.knots[0].1;
                }
                if t >= self.horizon() {
                    return self.knots.last().unwrap().1;
                }
                let j = self
                    .knots
                    .windows(2)
                    .position(|w| t < w[1].0)
                    .unwrap_or(self.knots.len() - 2);
                let (t0, s0) = self.knots[j];
                let (t1, s1) = self.knots[j + 1];
                let w = (t - t0) / (t1 - t0);
                s0 + w * (s1 - s0)
            }
        }
    }

    fn well_formed(&self) -> bool {
        self.knots.len() >= 2
            && self.knots.windows(2).all(|w| w[1].0 > w[0].0)
            && self.knots.iter().all(|&(t, s)| t.is_finite() && s.is_finite() && s > 0.0 && s <= 1.0)
    }

    fn non_increasing(&self) -> bool {
        self.knots.windows(2).all(|w| w[1].1 <= w[0].1 + 1e-15)
    }
}

/// Extended-real support value. Infinity is a tagged variant, never a float
/// sentinel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SupportValue {
    Finite(f64),
    Infinite,
}

impl SupportValue {
    pub fn finite(self) -> Option<f64> {
        match self {
            SupportValue::Finite(v) => Some(v),
            SupportValue::Infinite => None,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, SupportValue::Infinite)
    }
}

/// Per-assumption validation outcome; the constructor never throws for
/// assumption violations, it reports them here.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    pub contains_zero: bool,
    pub bounded: bool,
    pub shrink_non_increasing: bool,
    pub left_continuous_at_horizon: bool,
}

impl ValidationReport {
    pub fn all_pass(&self) -> bool {
        self.contains_zero && self.bounded && self.shrink_non_increasing && self.left_continuous_at_horizon
    }
}

/// The family `K_t = s(t)·K_base` in dimension `dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintFamily {
    pub base: ConstraintBase,
    pub shrink: ShrinkSchedule,
    pub dim: usize,
}

impl ConstraintFamily {
    pub fn new(base: ConstraintBase, shrink: ShrinkSchedule, dim: usize) -> Result<Self> {
        let fam = Self { base, shrink, dim };
        fam.check_shape()?;
        Ok(fam)
    }

    /// Box base with the flat schedule, dimension from the bound vectors.
    pub fn boxed(lo: Vec<f64>, hi: Vec<f64>, horizon: f64) -> Result<Self> {
        let dim = lo.len();
        Self::new(ConstraintBase::Box { lo, hi }, ShrinkSchedule::flat(horizon), dim)
    }

    /// Ball base with the flat schedule.
    pub fn ball(radius: f64, dim: usize, horizon: f64) -> Result<Self> {
        Self::new(ConstraintBase::Ball { radius }, ShrinkSchedule::flat(horizon), dim)
    }

    fn check_shape(&self) -> Result<()> {
        match &self.base {
            ConstraintBase::Box { lo, hi } => {
                if lo.len() != self.dim || hi.len() != self.dim {
                    return Err(Error::InvalidInput("box bounds do not match dim".into()));
                }
            }
            ConstraintBase::Ball { radius } => {
                if !radius.is_finite() || *radius < 0.0 {
                    return Err(Error::InvalidInput("ball radius must be finite and >= 0".into()));
                }
            }
            ConstraintBase::HalfLineCone { direction } => {
                if direction.len() != self.dim {
                    return Err(Error::InvalidInput("cone direction does not match dim".into()));
                }
                let norm = norm2(direction);
                if (norm - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidInput("cone direction must be a unit vector".into()));
                }
            }
        }
        if !self.shrink.well_formed() {
            return Err(Error::InvalidInput(
                "shrink schedule needs >= 2 knots with s in (0,1] and increasing times".into(),
            ));
        }
        Ok(())
    }

    /// Horizon `T` carried by the shrink schedule.
    pub fn horizon(&self) -> f64 {
        self.shrink.horizon()
    }

    /// True iff the solvers may use this family (bounded base containing 0).
    pub fn solver_admissible(&self) -> bool {
        match &self.base {
            ConstraintBase::Box { lo, hi } => lo
                .iter()
                .zip(hi)
                .all(|(&l, &h)| l.is_finite() && h.is_finite() && l <= 0.0 && 0.0 <= h),
            ConstraintBase::Ball { radius } => radius.is_finite(),
            ConstraintBase::HalfLineCone { .. } => false,
        }
    }

    fn check_time(&self, t: f64) -> Result<f64> {
        let horizon = self.horizon();
        if !t.is_finite() || t < 0.0 || t > horizon + 1e-12 {
            return Err(Error::TimeOutOfHorizon { t, horizon });
        }
        Ok(self.shrink.eval(t))
    }

    /// Support function `δ_t(u)`.
    pub fn support(&self, t: f64, u: &[f64]) -> Result<SupportValue> {
        let s = self.check_time(t)?;
        if u.len() != self.dim {
            return Err(Error::InvalidInput("support: u has wrong dimension".into()));
        }
        Ok(match &self.base {
            ConstraintBase::Box { lo, hi } => {
                let mut acc = 0.0;
                for i in 0..self.dim {
                    acc += (lo[i] * u[i]).max(hi[i] * u[i]);
                }
                SupportValue::Finite(s * acc)
            }
            ConstraintBase::Ball { radius } => SupportValue::Finite(s * radius * norm2(u)),
            ConstraintBase::HalfLineCone { direction } => {
                let d: f64 = direction.iter().zip(u).map(|(a, b)| a * b).sum();
                if d <= 0.0 {
                    SupportValue::Finite(0.0)
                } else {
                    SupportValue::Infinite
                }
            }
        })
    }

    /// Scalar convenience for the d = 1 solvers.
    pub fn support1(&self, t: f64, u: f64) -> Result<SupportValue> {
        self.support(t, std::slice::from_ref(&u))
    }

    /// Euclidean projection onto `K_t`. Requires a solver-admissible family.
    pub fn project(&self, t: f64, z: &[f64]) -> Result<Vec<f64>> {
        if !self.solver_admissible() {
            return Err(Error::UnsupportedConstraint(
                "projection needs a bounded base containing 0 (box or ball)".into(),
            ));
        }
        let s = self.check_time(t)?;
        if z.len() != self.dim {
            return Err(Error::InvalidInput("project: z has wrong dimension".into()));
        }
        Ok(match &self.base {
            ConstraintBase::Box { lo, hi } => z
                .iter()
                .enumerate()
                .map(|(i, &v)| v.clamp(s * lo[i], s * hi[i]))
                .collect(),
            ConstraintBase::Ball { radius } => {
                let r = s * radius;
                let n = norm2(z);
                if n <= r || n == 0.0 {
                    z.to_vec()
                } else {
                    z.iter().map(|&v| v * (r / n)).collect()
                }
            }
            ConstraintBase::HalfLineCone { .. } => unreachable!(),
        })
    }

    /// Euclidean distance `dist(z, K_t)`; zero iff `z ∈ K_t`.
    pub fn distance(&self, t: f64, z: &[f64]) -> Result<f64> {
        let p = self.project(t, z)?;
        Ok(norm2(&z.iter().zip(&p).map(|(a, b)| a - b).collect::<Vec<_>>()))
    }

    /// Scalar distance for the d = 1 solvers (box/ball collapse to an interval).
    pub fn distance1(&self, t: f64, z: f64) -> Result<f64> {
        self.distance(t, std::slice::from_ref(&z))
    }

    /// Radius of the largest centered ball inside `K_base` (0 when none).
    pub fn inscribed_radius_base(&self) -> f64 {
        match &self.base {
            ConstraintBase::Box { lo, hi } => lo
                .iter()
                .zip(hi)
                .map(|(&l, &h)| (-l).min(h))
                .fold(f64::INFINITY, f64::min)
                .max(0.0),
            ConstraintBase::Ball { radius } => *radius,
            ConstraintBase::HalfLineCone { .. } => 0.0,
        }
    }

    /// Assumption report; never fails.
    pub fn validate(&self) -> ValidationReport {
        let contains_zero = match &self.base {
            ConstraintBase::Box { lo, hi } => lo.iter().zip(hi).all(|(&l, &h)| l <= 0.0 && 0.0 <= h),
            ConstraintBase::Ball { radius } => *radius >= 0.0,
            ConstraintBase::HalfLineCone { .. } => true,
        };
        let bounded = match &self.base {
            ConstraintBase::Box { lo, hi } => {
                lo.iter().chain(hi.iter()).all(|v| v.is_finite())
            }
            ConstraintBase::Ball { radius } => radius.is_finite(),
            ConstraintBase::HalfLineCone { .. } => false,
        };
        // Left-continuity at T: evaluate s(T - h) along a refining tabulation.
        let horizon = self.horizon();
        let s_end = self.shrink.eval(horizon);
        let mut left_continuous = true;
        let mut h = (horizon.max(1e-9)) * 0.25;
        let mut prev_gap = f64::INFINITY;
        for _ in 0..20 {
            let gap = (self.shrink.eval((horizon - h).max(0.0)) - s_end).abs();
            if gap > prev_gap + 1e-15 {
                left_continuous = false;
                break;
            }
            prev_gap = gap;
            h *= 0.5;
        }
        if prev_gap > 1e-9 {
            left_continuous = false;
        }
        ValidationReport {
            contains_zero,
            bounded,
            shrink_non_increasing: self.shrink.non_increasing(),
            left_continuous_at_horizon: left_continuous,
        }
    }
}

#[inline]
fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn box1(lo: f64, hi: f64) -> ConstraintFamily {
        ConstraintFamily::boxed(vec![lo], vec![hi], 1.0).unwrap()
    }

    #[test]
    fn support_box_examples() {
        let f = box1(-1.0, 2.0);
        assert_eq!(f.support1(0.3, 1.0).unwrap().finite().unwrap(), 2.0);
        assert_eq!(f.support1(0.3, 0.0).unwrap().finite().unwrap(), 0.0);
        // negative direction picks the lower bound
        assert_eq!(f.support1(0.3, -2.0).unwrap().finite().unwrap(), 2.0);
    }

    #[test]
    fn support_ball_example() {
        let f = ConstraintFamily::ball(0.5, 2, 1.0).unwrap();
        let v = f.support(0.0, &[3.0, 4.0]).unwrap().finite().unwrap();
        assert!((v - 2.5).abs() < 1e-14);
        assert_eq!(f.support(0.0, &[0.0, 0.0]).unwrap().finite().unwrap(), 0.0);
    }

    #[test]
    fn support_shrunk_box_against_grid_oracle() {
        // brute force over a fine sample of K_T = s(T)·[-1,1]
        let fam = ConstraintFamily::new(
            ConstraintBase::Box { lo: vec![-1.0], hi: vec![1.0] },
            ShrinkSchedule { knots: vec![(0.0, 1.0), (1.0, 0.5)] },
            1,
        )
        .unwrap();
        let u = -2.0;
        let s = 0.5;
        let mut best = f64::NEG_INFINITY;
        let m = 200_001;
        for i in 0..m {
            let k = s * (-1.0 + 2.0 * i as f64 / (m - 1) as f64);
            best = best.max(k * u);
        }
        let v = fam.support1(1.0, u).unwrap().finite().unwrap();
        assert!((v - best).abs() < 1e-10, "closed form {v} vs brute force {best}");
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn support_cone() {
        let f = ConstraintFamily::new(
            ConstraintBase::HalfLineCone { direction: vec![1.0] },
            ShrinkSchedule::flat(1.0),
            1,
        )
        .unwrap();
        assert_eq!(f.support1(0.0, -3.0).unwrap(), SupportValue::Finite(0.0));
        assert!(f.support1(0.0, 0.5).unwrap().is_infinite());
        assert!(!f.solver_admissible());
    }

    #[test]
    fn support_time_domain_error() {
        let f = box1(-1.0, 1.0);
        assert!(matches!(
            f.support1(1.5, 1.0),
            Err(Error::TimeOutOfHorizon { .. })
        ));
        assert!(f.support1(-0.1, 1.0).is_err());
    }

    #[test]
    fn projection_examples() {
        let f = box1(-1.0, 1.0);
        assert_eq!(f.project(0.0, &[3.0]).unwrap(), vec![1.0]);
        assert_eq!(f.project(0.0, &[0.5]).unwrap(), vec![0.5]);
        let b = ConstraintFamily::ball(1.0, 2, 1.0).unwrap();
        let p = b.project(0.0, &[0.0, 2.0]).unwrap();
        assert!((p[0]).abs() < 1e-15 && (p[1] - 1.0).abs() < 1e-14);
        assert!((b.distance(0.0, &[0.0, 2.0]).unwrap() - 1.0).abs() < 1e-14);
        assert_eq!(f.distance1(0.0, 3.0).unwrap(), 2.0);
        assert_eq!(f.distance1(0.0, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn projection_rejects_cone() {
        let f = ConstraintFamily::new(
            ConstraintBase::HalfLineCone { direction: vec![1.0] },
            ShrinkSchedule::flat(1.0),
            1,
        )
        .unwrap();
        assert!(matches!(
            f.project(0.0, &[1.0]),
            Err(Error::UnsupportedConstraint(_))
        ));
    }

    #[test]
    fn validation_reports() {
        assert!(box1(-1.0, 1.0).validate().all_pass());
        let off = ConstraintFamily::boxed(vec![0.5], vec![1.0], 1.0).unwrap();
        let rep = off.validate();
        assert!(!rep.contains_zero);
        assert!(rep.bounded);
        let increasing = ConstraintFamily::new(
            ConstraintBase::Box { lo: vec![-1.0], hi: vec![1.0] },
            ShrinkSchedule { knots: vec![(0.0, 0.1), (1.0, 1.0)] },
            1,
        )
        .unwrap();
        assert!(!increasing.validate().shrink_non_increasing);
    }

    proptest! {
        // δ_t is sublinear and positively homogeneous.
        #[test]
        fn support_sublinear(u in -5.0f64..5.0, v in -5.0f64..5.0, lam in 0.0f64..4.0,
                             t in 0.0f64..1.0) {
            let f = ConstraintFamily::new(
                ConstraintBase::Box { lo: vec![-1.0], hi: vec![2.0] },
                ShrinkSchedule { knots: vec![(0.0, 1.0), (1.0, 0.4)] },
                1,
            ).unwrap();
            let d = |x: f64| f.support1(t, x).unwrap().finite().unwrap();
            prop_assert!(d(u + v) <= d(u) + d(v) + 1e-12);
            prop_assert!((d(lam * u) - lam * d(u)).abs() <= 1e-12 * (1.0 + lam));
        }

        // t ≤ t' implies δ_t(u) ≥ δ_{t'}(u).
        #[test]
        fn support_non_increasing_in_time(u in -5.0f64..5.0, t in 0.0f64..1.0, dt in 0.0f64..1.0) {
            let f = ConstraintFamily::new(
                ConstraintBase::Box { lo: vec![-1.0], hi: vec![1.0] },
                ShrinkSchedule { knots: vec![(0.0, 1.0), (0.5, 0.8), (1.0, 0.3)] },
                1,
            ).unwrap();
            let t2 = (t + dt).min(1.0);
            let a = f.support1(t, u).unwrap().finite().unwrap();
            let b = f.support1(t2, u).unwrap().finite().unwrap();
            prop_assert!(a >= b - 1e-12);
        }

        // projection is optimal against every sampled point of K_t
        #[test]
        fn projection_optimal(z0 in -4.0f64..4.0, z1 in -4.0f64..4.0, t in 0.0f64..1.0) {
            let f = ConstraintFamily::new(
                ConstraintBase::Ball { radius: 1.3 },
                ShrinkSchedule { knots: vec![(0.0, 1.0), (1.0, 0.6)] },
                2,
            ).unwrap();
            let z = [z0, z1];
            let p = f.project(t, &z).unwrap();
            let dp = ((z[0]-p[0]).powi(2) + (z[1]-p[1]).powi(2)).sqrt();
            let r = 1.3 * f.shrink.eval(t);
            for k in 0..64 {
                let ang = k as f64 * std::f64::consts::TAU / 64.0;
                for frac in [0.0, 0.5, 1.0] {
                    let kx = frac * r * ang.cos();
                    let ky = frac * r * ang.sin();
                    let dk = ((z[0]-kx).powi(2) + (z[1]-ky).powi(2)).sqrt();
                    prop_assert!(dp <= dk + 1e-12);
                }
            }
        }

        // closed-form support equals a dense-sample maximum of k·u
        #[test]
        fn support_matches_brute_force(u in -3.0f64..3.0, t in 0.0f64..1.0) {
            let f = ConstraintFamily::new(
                ConstraintBase::Box { lo: vec![-0.7], hi: vec![1.9] },
                ShrinkSchedule { knots: vec![(0.0, 1.0), (1.0, 0.5)] },
                1,
            ).unwrap();
            let s = f.shrink.eval(t);
            let mut best = f64::NEG_INFINITY;
            for i in 0..=4000 {
                let k = s * (-0.7 + (1.9 + 0.7) * i as f64 / 4000.0);
                best = best.max(k * u);
            }
            let v = f.support1(t, u).unwrap().finite().unwrap();
            prop_assert!((v - best).abs() < 1e-3 * (1.0 + v.abs()));
        }
    }
}
