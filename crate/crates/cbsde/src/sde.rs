//! Euler–Maruyama simulation of the (possibly drift-controlled) forward SDE
//!
//! ```text
//! X_{i+1} = X_i + (b(t_i, X_i) + ν_i) h + σ(t_i, X_i) ΔW_i        (gains mode)
//! X_{i+1} = X_i + (b(t_i, X_i) + σ ν_i) h + σ ΔW_i                (direct mode)
//! ```
//!
//! with counter-based Gaussian increments, plus the impulse-drift error probe
//! `E|X_{t0+ε} − x0 − u|²` for the control `ν = u/ε`.

use crate::control::ControlPolicy;
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Drift coefficient kinds. `Scale(a)` means `b(x) = a·x` componentwise
/// (mean-reverting for `a < 0`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DriftSpec {
    Zero,
    Constant { value: Vec<f64> },
    Scale { a: f64 },
}

/// Diagonal volatility kinds. `Zero` is a degenerate test fixture; the
/// solvers refuse it in gains mode because it has no inverse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DiffusionSpec {
    Scalar { value: f64 },
    Diagonal { values: Vec<f64> },
    Zero,
}

/// Which object carries the convex constraint: the gains process `Zσ⁻¹`
/// (volatility must be invertible) or `Z` itself (volatility constant in x).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintMode {
    Gains,
    Direct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdeModel {
    pub dim: usize,
    pub drift: DriftSpec,
    pub diffusion: DiffusionSpec,
    /// Declared common bound and Lipschitz constant `L`.
    pub bound: f64,
    pub mode: ConstraintMode,
}

impl SdeModel {
    /// Driftless unit-volatility model in one dimension (Brownian motion).
    pub fn brownian(bound: f64) -> Self {
        Self {
            dim: 1,
            drift: DriftSpec::Zero,
            diffusion: DiffusionSpec::Scalar { value: 1.0 },
            bound,
            mode: ConstraintMode::Gains,
        }
    }

    #[inline]
    pub fn drift_component(&self, _t: f64, x: &[f64], i: usize) -> f64 {
        match &self.drift {
            DriftSpec::Zero => 0.0,
            DriftSpec::Constant { value } => value[i],
            DriftSpec::Scale { a } => a * x[i],
        }
    }

    #[inline]
    pub fn sigma_component(&self, _t: f64, _x: &[f64], i: usize) -> f64 {
        match &self.diffusion {
            DiffusionSpec::Scalar { value } => *value,
            DiffusionSpec::Diagonal { values } => values[i],
            DiffusionSpec::Zero => 0.0,
        }
    }

    /// Scalar drift for the one-dimensional solvers.
    #[inline]
    pub fn drift1(&self, t: f64, x: f64) -> f64 {
        self.drift_component(t, std::slice::from_ref(&x), 0)
    }

    /// Scalar volatility for the one-dimensional solvers.
    #[inline]
    pub fn sigma1(&self, t: f64, x: f64) -> f64 {
        self.sigma_component(t, std::slice::from_ref(&x), 0)
    }

    /// All supported coefficient kinds are state-independent in σ and at most
    /// linear in x for b, so the lattice can use stencil transitions whenever
    /// the drift is state-independent too.
    pub fn coefficients_state_independent(&self) -> bool {
        !matches!(self.drift, DriftSpec::Scale { .. })
    }

    pub fn has_zero_diffusion(&self) -> bool {
        matches!(self.diffusion, DiffusionSpec::Zero)
            || matches!(&self.diffusion, DiffusionSpec::Scalar { value } if *value == 0.0)
            || matches!(&self.diffusion, DiffusionSpec::Diagonal { values } if values.iter().any(|v| *v == 0.0))
    }

    fn shape_ok(&self) -> bool {
        let drift_ok = match &self.drift {
            DriftSpec::Constant { value } => value.len() == self.dim,
            _ => true,
        };
        let diff_ok = match &self.diffusion {
            DiffusionSpec::Diagonal { values } => values.len() == self.dim,
            _ => true,
        };
        drift_ok && diff_ok && self.dim >= 1 && self.bound.is_finite() && self.bound > 0.0
    }

    /// Probe the declared bound and Lipschitz constant on sampled `(t, x)`.
    pub fn probe(&self, horizon: f64, x_lo: f64, x_hi: f64) -> Result<()> {
        if !self.shape_ok() {
            return Err(Error::ModelBounds("coefficient shapes do not match dim".into()));
        }
        let l = self.bound;
        let samples = 41;
        let x_of = |k: usize| x_lo + (x_hi - x_lo) * k as f64 / (samples - 1) as f64;
        for it in 0..5 {
            let t = horizon * it as f64 / 4.0;
            for k in 0..samples {
                let x = vec![x_of(k); self.dim];
                for i in 0..self.dim {
                    let b = self.drift_component(t, &x, i);
                    let s = self.sigma_component(t, &x, i);
                    if b.abs() > l + 1e-12 {
                        return Err(Error::ModelBounds(format!(
                            "|b({t}, {})| = {} exceeds declared L = {l}",
                            x[i],
                            b.abs()
                        )));
                    }
                    if s.abs() > l + 1e-12 {
                        return Err(Error::ModelBounds(format!(
                            "|sigma| = {} exceeds declared L = {l}",
                            s.abs()
                        )));
                    }
                }
                // Lipschitz probe against a shifted point
                if k + 1 < samples {
                    let x2 = vec![x_of(k + 1); self.dim];
                    let dxv = (x2[0] - x[0]).abs();
                    for i in 0..self.dim {
                        let db = (self.drift_component(t, &x, i) - self.drift_component(t, &x2, i)).abs();
                        let ds = (self.sigma_component(t, &x, i) - self.sigma_component(t, &x2, i)).abs();
                        if db > l * dxv + 1e-12 || ds > l * dxv + 1e-12 {
                            return Err(Error::ModelBounds(format!(
                                "coefficient Lipschitz probe failed near x = {}",
                                x[i]
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Probe for the backward solvers: additionally requires an invertible
    /// volatility with `|σ⁻¹| ≤ L` in gains mode.
    pub fn solver_probe(&self, horizon: f64, x_lo: f64, x_hi: f64) -> Result<()> {
        self.probe(horizon, x_lo, x_hi)?;
        if self.mode == ConstraintMode::Gains {
            if self.has_zero_diffusion() {
                return Err(Error::ModelBounds(
                    "degenerate volatility is a test-only fixture; gains-mode solvers need an invertible sigma".into(),
                ));
            }
            let samples = 41;
            for k in 0..samples {
                let x = vec![x_lo + (x_hi - x_lo) * k as f64 / (samples - 1) as f64; self.dim];
                for i in 0..self.dim {
                    let s = self.sigma_component(0.0, &x, i);
                    if s.abs() < 1.0 / (self.bound + 1e-12) {
                        return Err(Error::ModelBounds(format!(
                            "|sigma^-1| = {} exceeds declared L = {}",
                            1.0 / s.abs(),
                            self.bound
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Simulated paths with their Brownian increments. The Euler recursion holds
/// exactly between `states` and `increments`, and both are a pure function of
/// the seed.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    pub grid: TimeGrid,
    pub dim: usize,
    pub paths: usize,
    /// Row-major `paths × (steps+1) × dim`.
    pub states: Vec<f64>,
    /// Row-major `paths × steps × dim`.
    pub increments: Vec<f64>,
    pub seed: u64,
    pub control: Option<ControlPolicy>,
}

impl PathEnsemble {
    #[inline]
    pub fn state(&self, path: usize, step: usize) -> &[f64] {
        let w = (self.grid.steps() + 1) * self.dim;
        let off = path * w + step * self.dim;
        &self.states[off..off + self.dim]
    }

    #[inline]
    pub fn increment(&self, path: usize, step: usize) -> &[f64] {
        let w = self.grid.steps() * self.dim;
        let off = path * w + step * self.dim;
        &self.increments[off..off + self.dim]
    }

    pub fn terminal(&self, path: usize) -> &[f64] {
        self.state(path, self.grid.steps())
    }
}

/// Simulate `paths` Euler paths from `x0` at `grid.t0()`. `control = None`
/// is the zero control.
pub fn simulate(
    model: &SdeModel,
    x0: &[f64],
    grid: &TimeGrid,
    control: Option<&ControlPolicy>,
    paths: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    if x0.len() != model.dim {
        return Err(Error::InvalidInput("x0 does not match model dim".into()));
    }
    if paths == 0 {
        return Err(Error::InvalidInput("need at least one path".into()));
    }
    if control.is_some() && model.dim != 1 {
        return Err(Error::InvalidInput("controlled simulation is one-dimensional".into()));
    }
    let span = grid.horizon() - grid.t0();
    let nu_max = control.map(|c| c.max_abs()).unwrap_or(0.0);
    let reach = x0.iter().fold(0.0f64, |a, v| a.max(v.abs()))
        + model.bound * span
        + 6.0 * model.bound * span.sqrt()
        + nu_max * span
        + 1.0;
    model.probe(grid.horizon(), -reach, reach)?;

    let n = grid.steps();
    let d = model.dim;
    let h = grid.h();
    let sqrt_h = h.sqrt();

    let mut states = vec![0.0; paths * (n + 1) * d];
    let mut increments = vec![0.0; paths * n * d];

    let sim_one = |m: usize, st: &mut [f64], inc: &mut [f64]| {
        let mut x = x0.to_vec();
        st[..d].copy_from_slice(&x);
        for i in 0..n {
            let t = grid.time(i);
            let nu = control.map(|c| c.value_at(i, x[0])).unwrap_or(0.0);
            for j in 0..d {
                let dw = sqrt_h * rng::standard_normal(seed, m as u64, i as u64, j as u64);
                inc[i * d + j] = dw;
                let b = model.drift_component(t, &x, j);
                let s = model.sigma_component(t, &x, j);
                let drift_shift = if j == 0 {
                    match model.mode {
                        ConstraintMode::Gains => nu,
                        ConstraintMode::Direct => s * nu,
                    }
                } else {
                    0.0
                };
                x[j] += (b + drift_shift) * h + s * dw;
            }
            st[(i + 1) * d..(i + 2) * d].copy_from_slice(&x);
        }
    };

    states
        .par_chunks_mut((n + 1) * d)
        .zip(increments.par_chunks_mut(n * d))
        .enumerate()
        .for_each(|(m, (st, inc))| sim_one(m, st, inc));

    Ok(PathEnsemble {
        grid: *grid,
        dim: d,
        paths,
        states,
        increments,
        seed,
        control: control.cloned(),
    })
}

/// Mean-square displacement error of the impulse approximation: simulate with
/// `ν = u/ε` on `[t0, t0+ε]` and return `Ê |X_{t0+ε} − x0 − u|²`.
pub fn impulse_error(
    model: &SdeModel,
    x0: &[f64],
    t0: f64,
    u: &[f64],
    eps: f64,
    paths: usize,
    seed: u64,
) -> Result<f64> {
    if eps <= 0.0 {
        return Err(Error::InvalidInput("impulse window eps must be positive".into()));
    }
    if u.len() != model.dim {
        return Err(Error::InvalidInput("impulse u does not match model dim".into()));
    }
    let steps = 32;
    let grid = TimeGrid::new(t0, t0 + eps, steps)?;
    let h = grid.h();
    let sqrt_h = h.sqrt();
    let d = model.dim;

    let total: f64 = (0..paths)
        .into_par_iter()
        .map(|m| {
            let mut x = x0.to_vec();
            for i in 0..steps {
                let t = grid.time(i);
                for j in 0..d {
                    let dw = sqrt_h * rng::standard_normal(seed, m as u64, i as u64, j as u64);
                    let b = model.drift_component(t, &x, j) + u[j] / eps;
                    let s = model.sigma_component(t, &x, j);
                    x[j] += b * h + s * dw;
                }
            }
            (0..d).map(|j| (x[j] - x0[j] - u[j]).powi(2)).sum::<f64>()
        })
        .sum();
    Ok(total / paths as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brownian() -> SdeModel {
        SdeModel::brownian(1.0)
    }

    #[test]
    fn brownian_moments() {
        let grid = TimeGrid::new(0.0, 1.0, 16).unwrap();
        let m = 100_000;
        let e = simulate(&brownian(), &[0.0], &grid, None, m, 7).unwrap();
        let mean: f64 = (0..m).map(|p| e.terminal(p)[0]).sum::<f64>() / m as f64;
        let var: f64 = (0..m).map(|p| (e.terminal(p)[0] - mean).powi(2)).sum::<f64>() / m as f64;
        let se = (1.0f64 / m as f64).sqrt();
        assert!(mean.abs() < 3.0 * se, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn constant_control_shifts_mean() {
        let grid = TimeGrid::new(0.0, 1.0, 16).unwrap();
        let m = 100_000;
        let c = ControlPolicy::constant(grid, 0.7);
        let model = SdeModel { bound: 2.0, ..brownian() };
        let e = simulate(&model, &[0.25], &grid, Some(&c), m, 11).unwrap();
        let mean: f64 = (0..m).map(|p| e.terminal(p)[0]).sum::<f64>() / m as f64;
        let se = (1.0f64 / m as f64).sqrt();
        assert!((mean - (0.25 + 0.7)).abs() < 3.0 * se, "mean {mean}");
    }

    #[test]
    fn ou_variance_matches_exact_moments() {
        // dX = -X dt + dW: Var X_T = (1 - exp(-2T))/2
        let grid = TimeGrid::new(0.0, 1.0, 200).unwrap();
        let m = 100_000;
        let model = SdeModel {
            dim: 1,
            drift: DriftSpec::Scale { a: -1.0 },
            diffusion: DiffusionSpec::Scalar { value: 1.0 },
            bound: 8.0,
            mode: ConstraintMode::Gains,
        };
        let e = simulate(&model, &[0.0], &grid, None, m, 3).unwrap();
        let mean: f64 = (0..m).map(|p| e.terminal(p)[0]).sum::<f64>() / m as f64;
        let var: f64 = (0..m).map(|p| (e.terminal(p)[0] - mean).powi(2)).sum::<f64>() / m as f64;
        let exact = (1.0 - (-2.0f64).exp()) / 2.0;
        assert!((var - exact).abs() / exact < 0.05, "var {var} vs {exact}");
    }

    #[test]
    fn seed_determinism_is_bitwise() {
        let grid = TimeGrid::new(0.0, 1.0, 32).unwrap();
        let a = simulate(&brownian(), &[0.5], &grid, None, 64, 123).unwrap();
        let b = simulate(&brownian(), &[0.5], &grid, None, 64, 123).unwrap();
        assert_eq!(a.states.len(), b.states.len());
        for (x, y) in a.states.iter().zip(&b.states) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        let c = simulate(&brownian(), &[0.5], &grid, None, 64, 124).unwrap();
        assert!(a.states.iter().zip(&c.states).any(|(x, y)| x != y));
    }

    #[test]
    fn control_enters_linearly_for_constant_sigma() {
        let grid = TimeGrid::new(0.0, 1.0, 20).unwrap();
        let model = SdeModel { bound: 4.0, ..brownian() };
        let nu = ControlPolicy::constant(grid, 1.5);
        let with = simulate(&model, &[0.0], &grid, Some(&nu), 16, 9).unwrap();
        let without = simulate(&model, &[0.0], &grid, None, 16, 9).unwrap();
        let h = grid.h();
        for p in 0..16 {
            for i in 0..=grid.steps() {
                let shift = 1.5 * h * i as f64;
                let d = with.state(p, i)[0] - without.state(p, i)[0];
                assert!((d - shift).abs() < 1e-12, "path {p} step {i}: {d} vs {shift}");
            }
        }
    }

    #[test]
    fn euler_recursion_holds_exactly() {
        let grid = TimeGrid::new(0.0, 1.0, 8).unwrap();
        let model = SdeModel {
            dim: 1,
            drift: DriftSpec::Constant { value: vec![0.3] },
            diffusion: DiffusionSpec::Scalar { value: 0.8 },
            bound: 1.0,
            mode: ConstraintMode::Gains,
        };
        let e = simulate(&model, &[0.1], &grid, None, 4, 5).unwrap();
        let h = grid.h();
        for p in 0..4 {
            for i in 0..8 {
                let lhs = e.state(p, i + 1)[0];
                let rhs = e.state(p, i)[0] + 0.3 * h + 0.8 * e.increment(p, i)[0];
                assert_eq!(lhs.to_bits(), rhs.to_bits());
            }
        }
    }

    #[test]
    fn weak_order_one_on_deterministic_ou() {
        // sigma = 0 test fixture: X_T = (1-h)^N, error vs e^{-T} halves with h
        let model = SdeModel {
            dim: 1,
            drift: DriftSpec::Scale { a: -1.0 },
            diffusion: DiffusionSpec::Zero,
            bound: 4.0,
            mode: ConstraintMode::Direct,
        };
        let mut errs = Vec::new();
        for n in [50, 100, 200] {
            let grid = TimeGrid::new(0.0, 1.0, n).unwrap();
            let e = simulate(&model, &[1.0], &grid, None, 1, 1).unwrap();
            errs.push((e.terminal(0)[0] - (-1.0f64).exp()).abs());
        }
        assert!(errs[0] / errs[1] > 1.7 && errs[0] / errs[1] < 2.3);
        assert!(errs[1] / errs[2] > 1.7 && errs[1] / errs[2] < 2.3);
    }

    #[test]
    fn model_bounds_probe_rejects_oversized_drift() {
        let model = SdeModel {
            dim: 1,
            drift: DriftSpec::Constant { value: vec![5.0] },
            diffusion: DiffusionSpec::Scalar { value: 1.0 },
            bound: 1.0,
            mode: ConstraintMode::Gains,
        };
        let grid = TimeGrid::new(0.0, 1.0, 4).unwrap();
        assert!(matches!(
            simulate(&model, &[0.0], &grid, None, 2, 1),
            Err(Error::ModelBounds(_))
        ));
    }

    #[test]
    fn impulse_error_degenerate_is_zero() {
        let model = SdeModel {
            dim: 1,
            drift: DriftSpec::Zero,
            diffusion: DiffusionSpec::Zero,
            bound: 1.0,
            mode: ConstraintMode::Direct,
        };
        let err = impulse_error(&model, &[0.0], 0.0, &[0.8], 0.1, 128, 2).unwrap();
        assert!(err < 1e-24, "deterministic impulse error {err}");
    }

    #[test]
    fn impulse_error_scales_like_eps_for_brownian() {
        // exact level: E|W_eps|^2 = eps, so error/eps ≈ sigma^2 = 1
        let mut ratios = Vec::new();
        for &eps in &[0.1, 0.05, 0.025] {
            let err = impulse_error(&brownian(), &[0.0], 0.0, &[1.0], eps, 50_000, 77).unwrap();
            ratios.push(err / eps);
        }
        for r in &ratios {
            assert!(*r < 1.5 && *r > 0.5, "ratio {r}");
        }
        // trend stays flat rather than growing
        assert!(ratios[2] < 1.5 * ratios[0] + 0.1);
    }

    #[test]
    fn impulse_error_bounded_by_fitted_constant_on_ou() {
        let model = SdeModel {
            dim: 1,
            drift: DriftSpec::Scale { a: -1.0 },
            diffusion: DiffusionSpec::Scalar { value: 1.0 },
            bound: 8.0,
            mode: ConstraintMode::Gains,
        };
        let e1 = impulse_error(&model, &[0.2], 0.0, &[0.5], 0.2, 40_000, 5).unwrap();
        let e2 = impulse_error(&model, &[0.2], 0.0, &[0.5], 0.1, 40_000, 5).unwrap();
        // fit C from the two coarser windows, then check eps = 0.05
        let c = (e1 / 0.2).max(e2 / 0.1);
        let e3 = impulse_error(&model, &[0.2], 0.0, &[0.5], 0.05, 40_000, 5).unwrap();
        assert!(e3 <= 1.5 * c * 0.05, "e3 {e3} vs C*eps {}", c * 0.05);
    }
}
