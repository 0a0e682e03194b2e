//! Strong and weak dual control bounds.
//!
//! For a bounded piecewise-constant drift control ν, the strong evaluation
//! solves the unconstrained BSDE with the control folded into the forward
//! drift and the driver reduced by the support function:
//!
//! ```text
//! drift:  b + ν          (gains mode)        b + σ ν      (direct mode)
//! driver: f(t, x, y, z) − δ_t(ν_t)
//! ```
//!
//! Every such value is a certified lower bound of the constrained value; the
//! supremum over all bounded controls equals it. The search here is a finite
//! candidate grid (the exact sup needs impulse-like controls), so the
//! returned values are lower bounds, reported both for the raw terminal and
//! for its face-lift, which is the sharp variant away from the horizon.
//!
//! The weak evaluation reweights plain Monte Carlo paths by the exponential
//! density of the drift change instead of shifting the dynamics; for linear
//! drivers both formulations price the same object, which acceptance tests
//! check policy by policy.

use crate::constraint::{ConstraintFamily, SupportValue};
use crate::control::{ControlPolicy, PolicyValues};
use crate::driver::{DriverKind, DriverSpec};
use crate::error::{Error, Result};
use crate::facelift::FaceliftedPayoff;
use crate::grid::TimeGrid;
use crate::lattice::{backward_sweep, BackwardProblem, Lattice1D};
use crate::lsmc::solve_lsmc;
use crate::payoff::PayoffSpec;
use crate::penalty::Backend;
use crate::sde::{simulate, ConstraintMode, SdeModel};
use crate::solution::{BsdeSolution, SnapshotSpec};
use serde::{Deserialize, Serialize};

/// Search strategy over the candidate grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum SearchMode {
    /// Constant policies only.
    Constant,
    /// Constant warm start, then block-coordinate ascent over time blocks.
    CoordinateAscent { blocks: usize },
    /// Coordinate ascent over (time block, state bin) feedback tables.
    Feedback { blocks: usize, bins: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualSearchSpec {
    pub nu_max: f64,
    /// Candidate values per dimension (odd, so 0 is always a candidate).
    pub candidates: usize,
    #[serde(flatten)]
    pub mode: SearchMode,
}

impl DualSearchSpec {
    /// Defaults: `ν_max = 8L`, five candidates, 8 ascent blocks.
    pub fn for_model(model: &SdeModel) -> Self {
        Self {
            nu_max: 8.0 * model.bound,
            candidates: 5,
            mode: SearchMode::CoordinateAscent { blocks: 8 },
        }
    }

    fn candidate_values(&self) -> Result<Vec<f64>> {
        if self.candidates == 0 {
            return Err(Error::InvalidInput("empty dual candidate set".into()));
        }
        if self.candidates == 1 {
            return Ok(vec![0.0]);
        }
        let c = self.candidates;
        Ok((0..c)
            .map(|i| -self.nu_max + 2.0 * self.nu_max * i as f64 / (c - 1) as f64)
            .collect())
    }
}

/// Result of the strong dual search. `value` is the raw-terminal search
/// maximum (the direct rendering of the dual problem over the candidate
/// set); `facelift_version` is the same search with the face-lifted
/// terminal, sharp in the parabolic interior and the side used for the
/// sandwich gap.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DualValue {
    pub value: f64,
    pub g_version: f64,
    pub facelift_version: f64,
    pub best_policy: ControlPolicy,
    pub best_policy_lifted: ControlPolicy,
    pub evaluations: usize,
}

fn policy_support_ok(family: &ConstraintFamily, policy: &ControlPolicy) -> Result<()> {
    let check = |interval: usize, v: f64| -> Result<()> {
        let t = policy.grid.time(interval).clamp(0.0, family.horizon());
        match family.support1(t, v)? {
            SupportValue::Finite(_) => Ok(()),
            SupportValue::Infinite => Err(Error::InadmissibleControl { interval }),
        }
    };
    match &policy.values {
        PolicyValues::PerInterval(vs) => {
            for (i, &v) in vs.iter().enumerate() {
                check(i, v)?;
            }
        }
        PolicyValues::Feedback { table, .. } => {
            for (i, row) in table.iter().enumerate() {
                for &v in row {
                    check(i, v)?;
                }
            }
        }
    }
    Ok(())
}

/// Solve the control-shifted BSDE and return the full solution surface.
pub fn controlled_solve(
    model: &SdeModel,
    driver: &DriverSpec,
    terminal: &(dyn Fn(f64) -> f64 + Sync),
    family: &ConstraintFamily,
    policy: &ControlPolicy,
    backend: &Backend,
    grid: &TimeGrid,
    snapshots: &SnapshotSpec,
) -> Result<BsdeSolution> {
    if !family.solver_admissible() {
        return Err(Error::UnsupportedConstraint(
            "dual evaluation needs a bounded constraint base containing 0".into(),
        ));
    }
    if policy.grid.steps() != grid.steps()
        || (policy.grid.t0() - grid.t0()).abs() > 1e-12
        || (policy.grid.horizon() - grid.horizon()).abs() > 1e-12
    {
        return Err(Error::InvalidInput("policy breakpoints must match the solver grid".into()));
    }
    policy_support_ok(family, policy)?;

    let horizon = family.horizon();
    let mode = model.mode;
    let delta_at = |t: f64, v: f64| -> f64 {
        match family.support1(t.clamp(0.0, horizon), v) {
            Ok(SupportValue::Finite(d)) => d,
            _ => unreachable!("admissibility checked above"),
        }
    };

    match backend {
        Backend::Lattice(lattice) => {
            model.solver_probe(grid.horizon(), lattice.x_lo, lattice.x_hi)?;
            let drift = |t: f64, x: f64| {
                let i = step_of(grid, t);
                let nu = policy.value_at(i, x);
                match mode {
                    ConstraintMode::Gains => model.drift1(t, x) + nu,
                    ConstraintMode::Direct => model.drift1(t, x) + model.sigma1(t, x) * nu,
                }
            };
            let sigma = |t: f64, x: f64| model.sigma1(t, x);
            let drv = |t: f64, x: f64, y: f64, z: f64| {
                let i = step_of(grid, t);
                driver.eval(t, x, y, z) - delta_at(t, policy.value_at(i, x))
            };
            let problem = BackwardProblem {
                drift: &drift,
                sigma: &sigma,
                driver: &drv,
                driver_lipschitz: driver.lipschitz,
                terminal,
                compensator_rate: None,
                violation_rate_cutoff: f64::INFINITY,
                state_independent: model.coefficients_state_independent()
                    && policy.is_deterministic(),
            };
            Ok(backward_sweep(&problem, grid, lattice, snapshots)?.solution)
        }
        Backend::Lsmc { paths, basis, seed, x0 } => {
            let ens = simulate(model, &[*x0], grid, Some(policy), *paths, *seed)?;
            let pol = policy.clone();
            let fam = family.clone();
            let base = driver.clone();
            let g2 = *grid;
            let drv = DriverSpec {
                kind: DriverKind::Custom(std::sync::Arc::new(move |t, x, y, z| {
                    let i = step_of(&g2, t);
                    let d = match fam.support1(t.clamp(0.0, fam.horizon()), pol.value_at(i, x)) {
                        Ok(SupportValue::Finite(d)) => d,
                        _ => 0.0,
                    };
                    base.eval(t, x, y, z) - d
                })),
                lipschitz: driver.lipschitz,
            };
            solve_lsmc(model, &drv, terminal, &ens, basis, snapshots)
        }
    }
}

#[inline]
fn step_of(grid: &TimeGrid, t: f64) -> usize {
    let i = ((t - grid.t0()) / grid.h()).floor();
    (i.max(0.0) as usize).min(grid.steps() - 1)
}

/// Value `Y^{ν}(t0, x0)` of one policy.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_control(
    model: &SdeModel,
    driver: &DriverSpec,
    terminal: &(dyn Fn(f64) -> f64 + Sync),
    family: &ConstraintFamily,
    policy: &ControlPolicy,
    backend: &Backend,
    grid: &TimeGrid,
    x0: f64,
) -> Result<f64> {
    let sol = controlled_solve(
        model,
        driver,
        terminal,
        family,
        policy,
        backend,
        grid,
        &SnapshotSpec::Times(vec![]),
    )?;
    Ok(sol.initial_value(x0))
}

struct SearchOutcome {
    value: f64,
    policy: ControlPolicy,
    evaluations: usize,
}

#[allow(clippy::too_many_arguments)]
fn search_terminal(
    model: &SdeModel,
    driver: &DriverSpec,
    terminal: &(dyn Fn(f64) -> f64 + Sync),
    family: &ConstraintFamily,
    search: &DualSearchSpec,
    backend: &Backend,
    grid: &TimeGrid,
    x0: f64,
) -> Result<SearchOutcome> {
    let candidates = search.candidate_values()?;
    let mut evaluations = 0usize;
    let mut eval = |policy: &ControlPolicy| -> Result<f64> {
        evaluations += 1;
        evaluate_control(model, driver, terminal, family, policy, backend, grid, x0)
    };

    // constant warm start; ties break toward the earlier candidate
    let mut best_policy = ControlPolicy::zero(*grid);
    let mut best_value = f64::NEG_INFINITY;
    for &c in &candidates {
        let p = ControlPolicy::constant(*grid, c);
        let v = eval(&p)?;
        if v > best_value + 1e-12 {
            best_value = v;
            best_policy = p;
        }
    }

    let blocks = match search.mode {
        SearchMode::Constant => 0,
        SearchMode::CoordinateAscent { blocks } => blocks.min(grid.steps()).max(1),
        SearchMode::Feedback { blocks, .. } => blocks.min(grid.steps()).max(1),
    };

    if let SearchMode::CoordinateAscent { .. } = search.mode {
        let n = grid.steps();
        let mut values = match best_policy.values.clone() {
            PolicyValues::PerInterval(v) => v,
            _ => vec![0.0; n],
        };
        for _ in 0..3 {
            let mut improved = false;
            for b in 0..blocks {
                let lo = n * b / blocks;
                let hi = n * (b + 1) / blocks;
                let current = values[lo];
                let mut block_best = (best_value, current);
                for &c in &candidates {
                    if c == current {
                        continue;
                    }
                    let mut trial = values.clone();
                    trial[lo..hi].fill(c);
                    let p = ControlPolicy::new(*grid, PolicyValues::PerInterval(trial))?;
                    let v = eval(&p)?;
                    if v > block_best.0 + 1e-12 {
                        block_best = (v, c);
                    }
                }
                if block_best.1 != current {
                    values[lo..hi].fill(block_best.1);
                    best_value = block_best.0;
                    improved = true;
                }
            }
            if !improved {
                break;
            }
        }
        best_policy = ControlPolicy::new(*grid, PolicyValues::PerInterval(values))?;
    }

    if let SearchMode::Feedback { bins, .. } = search.mode {
        let (x_lo, x_hi) = match backend {
            Backend::Lattice(l) => (l.x_lo, l.x_hi),
            Backend::Lsmc { x0, .. } => (x0 - 4.0, x0 + 4.0),
        };
        let bins = bins.max(2);
        let edges: Vec<f64> = (1..bins)
            .map(|k| x_lo + (x_hi - x_lo) * k as f64 / bins as f64)
            .collect();
        let n = grid.steps();
        let mut table = vec![vec![0.0f64; bins]; n];
        if let PolicyValues::PerInterval(v) = &best_policy.values {
            for (i, row) in table.iter_mut().enumerate() {
                row.fill(v[i]);
            }
        }
        let mut best_fb = best_value;
        for b in 0..blocks {
            let lo = n * b / blocks;
            let hi = n * (b + 1) / blocks;
            for bin in 0..bins {
                let current = table[lo][bin];
                let mut cell_best = (best_fb, current);
                for &c in &candidates {
                    if c == current {
                        continue;
                    }
                    let mut trial = table.clone();
                    for row in trial[lo..hi].iter_mut() {
                        row[bin] = c;
                    }
                    let p = ControlPolicy::new(
                        *grid,
                        PolicyValues::Feedback { bin_edges: edges.clone(), table: trial },
                    )?;
                    let v = eval(&p)?;
                    if v > cell_best.0 + 1e-12 {
                        cell_best = (v, c);
                    }
                }
                if cell_best.1 != current {
                    for row in table[lo..hi].iter_mut() {
                        row[bin] = cell_best.1;
                    }
                    best_fb = cell_best.0;
                }
            }
        }
        if best_fb > best_value {
            best_value = best_fb;
            best_policy =
                ControlPolicy::new(*grid, PolicyValues::Feedback { bin_edges: edges, table })?;
        }
    }

    Ok(SearchOutcome { value: best_value, policy: best_policy, evaluations })
}

/// Finite-candidate maximization of the dual value, reported for both the
/// raw terminal (headline `value`) and its face-lift.
#[allow(clippy::too_many_arguments)]
pub fn strong_dual_value(
    model: &SdeModel,
    driver: &DriverSpec,
    payoff: &PayoffSpec,
    lifted: &FaceliftedPayoff,
    family: &ConstraintFamily,
    search: &DualSearchSpec,
    backend: &Backend,
    grid: &TimeGrid,
    x0: f64,
) -> Result<DualValue> {
    let raw = search_terminal(
        model,
        driver,
        &|x| payoff.eval(x),
        family,
        search,
        backend,
        grid,
        x0,
    )?;
    let lift = search_terminal(
        model,
        driver,
        &|x| lifted.eval(x),
        family,
        search,
        backend,
        grid,
        x0,
    )?;
    Ok(DualValue {
        value: raw.value,
        g_version: raw.value,
        facelift_version: lift.value,
        best_policy: raw.policy,
        best_policy_lifted: lift.policy,
        evaluations: raw.evaluations + lift.evaluations,
    })
}

/// Monte Carlo evaluation under the exponential change of measure (linear
/// drivers with no z-term, constant volatility, deterministic policy).
/// Returns `(value, standard_error)`.
#[allow(clippy::too_many_arguments)]
pub fn weak_dual_value(
    model: &SdeModel,
    driver: &DriverSpec,
    payoff: &PayoffSpec,
    family: &ConstraintFamily,
    policy: &ControlPolicy,
    grid: &TimeGrid,
    x0: f64,
    paths: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let (alpha, c) = match driver.kind {
        DriverKind::Zero => (0.0, 0.0),
        DriverKind::Linear { alpha, beta, c } => {
            if beta != 0.0 {
                return Err(Error::InvalidInput(
                    "weak dual evaluation supports linear drivers with no z-term (beta = 0)".into(),
                ));
            }
            (alpha, c)
        }
        DriverKind::Custom(_) => {
            return Err(Error::InvalidInput(
                "weak dual evaluation is restricted to linear drivers".into(),
            ))
        }
    };
    if !policy.is_deterministic() {
        return Err(Error::InvalidInput("weak dual evaluation needs a deterministic policy".into()));
    }
    if !model.coefficients_state_independent() && model.mode == ConstraintMode::Direct {
        return Err(Error::InvalidInput("direct mode needs state-independent volatility".into()));
    }
    if policy.grid.steps() != grid.steps() {
        return Err(Error::InvalidInput("policy breakpoints must match the grid".into()));
    }
    policy_support_ok(family, policy)?;
    if model.has_zero_diffusion() {
        return Err(Error::ModelBounds("weak dual needs nondegenerate volatility".into()));
    }

    let ens = simulate(model, &[x0], grid, None, paths, seed)?;
    let h = grid.h();
    let n = grid.steps();
    let span = grid.horizon() - grid.t0();
    let growth = (alpha * span).exp();

    // deterministic part: ∫ e^{α(s-t0)} (c − δ_s(ν_s)) ds, left endpoints
    let mut det = 0.0;
    for i in 0..n {
        let t = grid.time(i);
        let d = match family.support1(t.clamp(0.0, family.horizon()), policy.value_at(i, 0.0))? {
            SupportValue::Finite(d) => d,
            SupportValue::Infinite => return Err(Error::InadmissibleControl { interval: i }),
        };
        det += h * (alpha * (t - grid.t0())).exp() * (c - d);
    }

    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for p in 0..paths {
        let mut log_gamma = 0.0;
        for i in 0..n {
            let t = grid.time(i);
            let nu = policy.value_at(i, 0.0);
            let theta = match model.mode {
                ConstraintMode::Gains => nu / model.sigma1(t, 0.0),
                ConstraintMode::Direct => nu,
            };
            log_gamma += -0.5 * theta * theta * h + theta * ens.increment(p, i)[0];
        }
        let v = log_gamma.exp() * growth * payoff.eval(ens.terminal(p)[0]);
        sum += v;
        sum_sq += v * v;
    }
    let m = paths as f64;
    let mean = sum / m;
    let var = (sum_sq / m - mean * mean).max(0.0);
    Ok((mean + det, (var / m).sqrt()))
}

/// Dynamic-programming residual: full-horizon dual value against the nested
/// two-stage evaluation split at `theta`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DppResidual {
    pub full: f64,
    pub nested: f64,
    pub residual: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn dpp_residual(
    model: &SdeModel,
    driver: &DriverSpec,
    payoff: &PayoffSpec,
    family: &ConstraintFamily,
    theta: f64,
    search: &DualSearchSpec,
    backend: &Backend,
    grid: &TimeGrid,
    x0: f64,
) -> Result<DppResidual> {
    let full = search_terminal(
        model,
        driver,
        &|x| payoff.eval(x),
        family,
        search,
        backend,
        grid,
        x0,
    )?
    .value;

    if (theta - grid.horizon()).abs() < 0.5 * grid.h() {
        return Ok(DppResidual { full, nested: full, residual: 0.0 });
    }
    let i_theta = grid.index_of(theta);
    if i_theta == 0 || i_theta >= grid.steps() {
        return Err(Error::InvalidInput("split time must be an interior grid time".into()));
    }
    let theta = grid.time(i_theta);
    let lattice = match backend {
        Backend::Lattice(l) => l.clone(),
        Backend::Lsmc { .. } => {
            return Err(Error::InvalidInput(
                "the nested dynamic-programming stage needs the lattice backend".into(),
            ))
        }
    };

    // Inner stage: per-node sup over constant candidates on [theta, T].
    let tail = TimeGrid::new(theta, grid.horizon(), grid.steps() - i_theta)?;
    let candidates = search.candidate_values()?;
    let xs = lattice.x_nodes();
    let mut table = vec![f64::NEG_INFINITY; xs.len()];
    for &cand in &candidates {
        let p = ControlPolicy::constant(tail, cand);
        let sol = controlled_solve(
            model,
            driver,
            &|x| payoff.eval(x),
            family,
            &p,
            backend,
            &tail,
            &SnapshotSpec::Times(vec![]),
        )?;
        let slice = &sol.slices[0];
        for (j, &y) in slice.y.iter().enumerate() {
            if y > table[j] {
                table[j] = y;
            }
        }
    }

    // Outer stage: search on [t0, theta] with the tabulated inner values.
    let head = TimeGrid::new(grid.t0(), theta, i_theta)?;
    let table_ref = &table;
    let xs_ref = &xs;
    let nested = search_terminal(
        model,
        driver,
        &move |x: f64| crate::solution::interp_uniform(xs_ref, table_ref, x),
        family,
        search,
        backend,
        &head,
        x0,
    )?
    .value;

    Ok(DppResidual { full, nested, residual: (full - nested).abs() })
}

/// Inner-stage dual table at a split time, exposed for the self-face-lift
/// audit of value functions.
#[allow(clippy::too_many_arguments)]
pub fn dual_table_at(
    model: &SdeModel,
    driver: &DriverSpec,
    payoff: &PayoffSpec,
    family: &ConstraintFamily,
    theta: f64,
    search: &DualSearchSpec,
    lattice: &Lattice1D,
    horizon: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let steps = ((horizon - theta) / 0.005).ceil().max(8.0) as usize;
    let tail = TimeGrid::new(theta, horizon, steps)?;
    let candidates = search.candidate_values()?;
    let xs = lattice.x_nodes();
    let mut table = vec![f64::NEG_INFINITY; xs.len()];
    for &cand in &candidates {
        let p = ControlPolicy::constant(tail, cand);
        let sol = controlled_solve(
            model,
            driver,
            &|x| payoff.eval(x),
            family,
            &p,
            &Backend::Lattice(lattice.clone()),
            &tail,
            &SnapshotSpec::Times(vec![]),
        )?;
        for (j, &y) in sol.slices[0].y.iter().enumerate() {
            if y > table[j] {
                table[j] = y;
            }
        }
    }
    Ok((xs, table))
}
