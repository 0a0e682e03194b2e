//! Empirical regularity studies on solved value surfaces: the two-sided
//! support-function bound in space, the ½-Hölder modulus in time, the
//! terminal face-lift limit, and the compensator-continuity proxy. Results
//! are collected into a machine-readable report with pass/fail flags.

use crate::constraint::{ConstraintFamily, SupportValue};
use crate::error::{Error, Result};
use crate::facelift::FaceliftedPayoff;
use crate::payoff::PayoffSpec;
use crate::solution::{BsdeSolution, Representation};
use serde::{Deserialize, Serialize};

/// Acceptance bands for the fitted exponents.
pub const TIME_SLOPE_BAND: (f64, f64) = (0.4, 0.75);
pub const TIME_STDERR_MAX: f64 = 0.1;
pub const TERMINAL_SLOPE_BAND: (f64, f64) = (0.35, 0.75);

/// Least-squares fit of `ln y = slope · ln x + b`; returns `(slope, stderr)`.
pub fn fit_loglog(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::InvalidInput("log-log fit needs >= 2 points".into()));
    }
    if xs.iter().chain(ys.iter()).any(|&v| v <= 0.0) {
        return Err(Error::InvalidInput("log-log fit needs positive data".into()));
    }
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidInput("log-log fit has no x-spread".into()));
    }
    let slope = sxy / sxx;
    let dof = (xs.len() as f64 - 2.0).max(1.0);
    let ss_res: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(a, b)| {
            let pred = my + slope * (a - mx);
            (b - pred).powi(2)
        })
        .sum();
    let stderr = (ss_res / dof / sxx).sqrt();
    Ok((slope, stderr))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpacePair {
    pub x: f64,
    pub x2: f64,
    pub y: f64,
    pub y2: f64,
    pub delta_fwd: f64,
    pub delta_bwd: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpaceSection {
    pub time: f64,
    pub tolerance: f64,
    pub violations: usize,
    pub pair_count: usize,
    pub fitted_lipschitz: f64,
    pub passed: bool,
    /// Subsampled evidence rows.
    pub pairs: Vec<SpacePair>,
}

/// Check `−δ_t(x'−x) − tol ≤ Y(t,x) − Y(t,x') ≤ δ_t(x−x') + tol` over node
/// pairs inside the window and fit a Lipschitz constant from adjacent nodes.
pub fn space_modulus(
    solution: &BsdeSolution,
    family: &ConstraintFamily,
    t: f64,
    window: (f64, f64),
    tolerance: f64,
) -> Result<SpaceSection> {
    let xs = match &solution.representation {
        Representation::Lattice { x_nodes } => x_nodes,
        Representation::MonteCarlo { .. } => {
            return Err(Error::InvalidInput("space modulus needs the lattice representation".into()))
        }
    };
    let slice = solution.slice_at(t)?;
    let idx: Vec<usize> = xs
        .iter()
        .enumerate()
        .filter(|(_, &x)| x >= window.0 && x <= window.1)
        .map(|(j, _)| j)
        .collect();
    if idx.len() < 3 {
        return Err(Error::InvalidInput("space modulus needs >= 3 samples in the window".into()));
    }
    let stride = (idx.len() / 160).max(1);
    let sampled: Vec<usize> = idx.iter().copied().step_by(stride).collect();

    let mut violations = 0usize;
    let mut pair_count = 0usize;
    let mut pairs = Vec::new();
    let t_clamped = t.clamp(0.0, family.horizon());
    for (a, &i) in sampled.iter().enumerate() {
        for &j in sampled.iter().skip(a + 1) {
            let dx_fwd = xs[i] - xs[j];
            let d_fwd = match family.support1(t_clamped, dx_fwd)? {
                SupportValue::Finite(d) => d,
                SupportValue::Infinite => continue,
            };
            let d_bwd = match family.support1(t_clamped, -dx_fwd)? {
                SupportValue::Finite(d) => d,
                SupportValue::Infinite => continue,
            };
            let diff = slice.y[i] - slice.y[j];
            pair_count += 1;
            let ok = diff <= d_fwd + tolerance && diff >= -(d_bwd + tolerance);
            if !ok {
                violations += 1;
            }
            if pairs.len() < 64 && (pair_count % 37 == 0 || !ok) {
                pairs.push(SpacePair {
                    x: xs[i],
                    x2: xs[j],
                    y: slice.y[i],
                    y2: slice.y[j],
                    delta_fwd: d_fwd,
                    delta_bwd: d_bwd,
                });
            }
        }
    }
    let fitted_lipschitz = idx
        .windows(2)
        .map(|w| (slice.y[w[1]] - slice.y[w[0]]).abs() / (xs[w[1]] - xs[w[0]]))
        .fold(0.0f64, f64::max);
    Ok(SpaceSection {
        time: t,
        tolerance,
        violations,
        pair_count,
        fitted_lipschitz,
        passed: violations == 0,
        pairs,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimePair {
    pub t: f64,
    pub t2: f64,
    pub x: f64,
    pub y: f64,
    pub y2: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimeSection {
    pub x: f64,
    pub slope: f64,
    pub stderr: f64,
    pub inconclusive: bool,
    pub excluded_below_floor: usize,
    pub passed: bool,
    pub pairs: Vec<TimePair>,
}

/// Fit the exponent of `|Y(t,x) − Y(t',x)| ≈ C|t−t'|^γ` from consecutive
/// dyadic separations `T − τ_k`. Differences below the tolerance floor are
/// excluded; if fewer than three pairs survive the section is inconclusive
/// rather than failed.
pub fn time_modulus(
    solution: &BsdeSolution,
    x: f64,
    taus: &[f64],
    floor: f64,
) -> Result<TimeSection> {
    if taus.len() < 4 {
        return Err(Error::InvalidInput("time modulus needs >= 4 dyadic separations".into()));
    }
    let horizon = solution.grid.horizon();
    let mut pairs = Vec::new();
    let mut seps = Vec::new();
    let mut diffs = Vec::new();
    let mut excluded = 0usize;
    for w in taus.windows(2) {
        let (tau_big, tau_small) = (w[0], w[1]);
        let t1 = horizon - tau_big;
        let t2 = horizon - tau_small;
        let y1 = solution.value_at(t1, x)?;
        let y2 = solution.value_at(t2, x)?;
        pairs.push(TimePair { t: t1, t2, x, y: y1, y2 });
        let d = (y1 - y2).abs();
        if d < floor {
            excluded += 1;
            continue;
        }
        seps.push(tau_big - tau_small);
        diffs.push(d);
    }
    if seps.len() < 3 {
        return Ok(TimeSection {
            x,
            slope: f64::NAN,
            stderr: f64::NAN,
            inconclusive: true,
            excluded_below_floor: excluded,
            passed: true,
            pairs,
        });
    }
    let (slope, stderr) = fit_loglog(&seps, &diffs)?;
    let passed =
        slope >= TIME_SLOPE_BAND.0 && slope <= TIME_SLOPE_BAND.1 && stderr <= TIME_STDERR_MAX;
    Ok(TimeSection {
        x,
        slope,
        stderr,
        inconclusive: false,
        excluded_below_floor: excluded,
        passed,
        pairs,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TerminalRow {
    pub h: f64,
    pub err_facelift: f64,
    pub err_raw: f64,
}

/// Which reference the terminal study treats as primary; comparing against
/// the raw payoff is the deliberate mis-specification used as a negative
/// control.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerminalCompare {
    Facelift,
    RawPayoff,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TerminalSection {
    pub table: Vec<TerminalRow>,
    pub slope_facelift: f64,
    pub slope_raw: f64,
    pub compare: TerminalCompare,
    /// True when the payoff genuinely needs lifting (`max|ĝ−g|` above tol).
    pub lift_is_nontrivial: bool,
    /// True when the raw-payoff comparison was flagged as failing to decay.
    pub negative_control_rejected: bool,
    pub passed: bool,
}

/// Max-over-window error tables `h ↦ max_x |Y(T−h, x) − reference(x)|` and
/// their log-log slopes.
pub fn terminal_limit(
    solution: &BsdeSolution,
    payoff: &PayoffSpec,
    lifted: &FaceliftedPayoff,
    h_schedule: &[f64],
    window: (f64, f64),
    compare: TerminalCompare,
) -> Result<TerminalSection> {
    let xs = match &solution.representation {
        Representation::Lattice { x_nodes } => x_nodes.clone(),
        Representation::MonteCarlo { .. } => {
            return Err(Error::InvalidInput("terminal study needs the lattice representation".into()))
        }
    };
    if h_schedule.len() < 3 {
        return Err(Error::InvalidInput("terminal study needs >= 3 offsets".into()));
    }
    let horizon = solution.grid.horizon();
    let mut table = Vec::new();
    for &h in h_schedule {
        let slice = solution.slice_at(horizon - h)?;
        let mut e_fl = 0.0f64;
        let mut e_raw = 0.0f64;
        for (j, &x) in xs.iter().enumerate() {
            if x < window.0 || x > window.1 {
                continue;
            }
            e_fl = e_fl.max((slice.y[j] - lifted.eval(x)).abs());
            e_raw = e_raw.max((slice.y[j] - payoff.eval(x)).abs());
        }
        table.push(TerminalRow { h, err_facelift: e_fl, err_raw: e_raw });
    }
    let hs: Vec<f64> = table.iter().map(|r| r.h).collect();
    let efl: Vec<f64> = table.iter().map(|r| r.err_facelift.max(1e-300)).collect();
    let eraw: Vec<f64> = table.iter().map(|r| r.err_raw.max(1e-300)).collect();
    let (slope_fl, _) = fit_loglog(&hs, &efl)?;
    let (slope_raw, _) = fit_loglog(&hs, &eraw)?;

    let lift_gap = xs
        .iter()
        .filter(|&&x| x >= window.0 && x <= window.1)
        .map(|&x| (lifted.eval(x) - payoff.eval(x)).abs())
        .fold(0.0f64, f64::max);
    let lift_is_nontrivial = lift_gap > 1e-6;
    // The raw comparison decays only when no lift is needed.
    let negative_control_rejected = lift_is_nontrivial && slope_raw < 0.2;

    let primary_slope = match compare {
        TerminalCompare::Facelift => slope_fl,
        TerminalCompare::RawPayoff => slope_raw,
    };
    let in_band =
        primary_slope >= TERMINAL_SLOPE_BAND.0 && primary_slope <= TERMINAL_SLOPE_BAND.1;
    let passed = match compare {
        TerminalCompare::Facelift => in_band && (!lift_is_nontrivial || negative_control_rejected),
        TerminalCompare::RawPayoff => in_band,
    };
    Ok(TerminalSection {
        table,
        slope_facelift: slope_fl,
        slope_raw,
        compare,
        lift_is_nontrivial,
        negative_control_rejected,
        passed,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompensatorRow {
    pub steps: usize,
    pub h: f64,
    pub max_interior_increment: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompensatorSection {
    pub rows: Vec<CompensatorRow>,
    /// Increments shrink with the step (halving within a 30% margin, or
    /// identically zero throughout).
    pub passed: bool,
}

/// Continuity proxy from a step-refinement sequence of solutions: the max
/// per-step compensator increment over `[t0, T − √h]` must shrink with `h`.
pub fn compensator_refinement(solutions: &[&BsdeSolution]) -> Result<CompensatorSection> {
    if solutions.len() < 2 {
        return Err(Error::InvalidInput("compensator proxy needs >= 2 resolutions".into()));
    }
    let mut rows = Vec::new();
    for sol in solutions {
        let n = sol.grid.steps();
        let h = sol.grid.h();
        let cut = sol.grid.horizon() - h.sqrt();
        let max_inc = (0..n)
            .filter(|&i| sol.grid.time(i) < cut)
            .map(|i| sol.step_max_compensator[i])
            .fold(0.0f64, f64::max);
        rows.push(CompensatorRow { steps: n, h, max_interior_increment: max_inc });
    }
    let mut passed = true;
    for w in rows.windows(2) {
        let (coarse, fine) = (&w[0], &w[1]);
        if coarse.max_interior_increment == 0.0 && fine.max_interior_increment == 0.0 {
            continue;
        }
        let ratio_h = coarse.h / fine.h;
        let expected = coarse.max_interior_increment / ratio_h;
        if fine.max_interior_increment > expected * 1.3 + 1e-15 {
            passed = false;
        }
    }
    Ok(CompensatorSection { rows, passed })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelfFaceliftSection {
    pub theta: f64,
    pub max_residual: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// The assembled report. `report_version` is the schema version.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegularityReport {
    pub report_version: u32,
    pub artifact_version: String,
    pub config_hash: String,
    pub fixture: String,
    /// The deterministic-grid surrogate note: the studies compare grid values
    /// of `(t, x) ↦ Y(t, x)`, a consequence of the stopping-time estimates
    /// but strictly weaker than them.
    pub scope_note: String,
    pub solver_tolerance: f64,
    pub space: Vec<SpaceSection>,
    pub time: Vec<TimeSection>,
    pub terminal: Option<TerminalSection>,
    pub compensator: Option<CompensatorSection>,
    pub self_facelift: Option<SelfFaceliftSection>,
    pub all_passed: bool,
}

impl RegularityReport {
    pub fn empty(artifact_version: &str, config_hash: &str, fixture: &str) -> Self {
        Self {
            report_version: 1,
            artifact_version: artifact_version.to_string(),
            config_hash: config_hash.to_string(),
            fixture: fixture.to_string(),
            scope_note: scope_note(),
            solver_tolerance: 0.0,
            space: Vec::new(),
            time: Vec::new(),
            terminal: None,
            compensator: None,
            self_facelift: None,
            all_passed: true,
        }
    }

    pub fn recompute_flag(&mut self) {
        let mut ok = true;
        ok &= self.space.iter().all(|s| s.passed);
        ok &= self.time.iter().all(|s| s.passed);
        if let Some(t) = &self.terminal {
            ok &= t.passed;
        }
        if let Some(c) = &self.compensator {
            ok &= c.passed;
        }
        if let Some(s) = &self.self_facelift {
            ok &= s.passed;
        }
        self.all_passed = ok;
    }
}

pub fn scope_note() -> String {
    "grid study of (t,x) -> Y(t,x): implied by, but weaker than, the stopping-time estimates"
        .to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loglog_fit_recovers_exponent() {
        let xs: Vec<f64> = (1..=6).map(|k| 1.0 / (1 << k) as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x.powf(0.5)).collect();
        let (slope, stderr) = fit_loglog(&xs, &ys).unwrap();
        assert!((slope - 0.5).abs() < 1e-12);
        assert!(stderr < 1e-12);
    }

    #[test]
    fn loglog_fit_rejects_bad_input() {
        assert!(fit_loglog(&[1.0], &[1.0]).is_err());
        assert!(fit_loglog(&[1.0, 2.0], &[0.0, 1.0]).is_err());
    }
}
