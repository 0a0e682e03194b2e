//! Least-squares Monte Carlo backend: the same backward recursion as the
//! lattice, with conditional expectations replaced by cross-sectional
//! regressions on the simulated paths.
//!
//! The default basis is local: paths are split into equal-count bins by state
//! and an affine fit is done per bin, which is considerably more robust than
//! global polynomials for kinked (face-lifted) terminal data. A global
//! polynomial basis is available as the alternative.

use crate::driver::DriverSpec;
use crate::error::{Error, Result};
use crate::sde::{PathEnsemble, SdeModel};
use crate::solution::{BsdeSolution, Representation, SnapshotSpec, SolveDiagnostics, TimeSlice};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

const PICARD_TOL: f64 = 1e-12;
const PICARD_CONTRACT_TOL: f64 = 1e-10;
const PICARD_CAP: u32 = 50;
const CONDITION_LIMIT: f64 = 1e10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BasisSpec {
    /// Equal-count state bins with a per-bin affine fit.
    LocalBins { bins: usize },
    /// Global polynomial of the given degree on normalized state.
    Polynomial { degree: usize },
}

impl Default for BasisSpec {
    fn default() -> Self {
        BasisSpec::LocalBins { bins: 50 }
    }
}

/// Backward induction over a simulated ensemble.
pub fn solve_lsmc(
    model: &SdeModel,
    driver: &DriverSpec,
    terminal: &(dyn Fn(f64) -> f64 + Sync),
    ensemble: &PathEnsemble,
    basis: &BasisSpec,
    snapshots: &SnapshotSpec,
) -> Result<BsdeSolution> {
    if model.dim != 1 || ensemble.dim != 1 {
        return Err(Error::InvalidInput("LSMC backend is one-dimensional".into()));
    }
    let grid = ensemble.grid;
    let h = grid.h();
    if h * driver.lipschitz >= 0.5 {
        return Err(Error::StepSizeTooLarge { h, lipschitz: driver.lipschitz });
    }
    let m = ensemble.paths;
    let basis_dim = match basis {
        BasisSpec::LocalBins { bins } => {
            if *bins == 0 || m < 4 * bins {
                return Err(Error::InvalidInput(format!(
                    "{m} paths cannot support {bins} regression bins"
                )));
            }
            2 * bins
        }
        BasisSpec::Polynomial { degree } => degree + 1,
    };
    if m <= 2 * basis_dim {
        return Err(Error::InvalidInput("path count must exceed the basis dimension".into()));
    }
    let x_probe: (f64, f64) = (0..m).fold((f64::INFINITY, f64::NEG_INFINITY), |acc, p| {
        let x = ensemble.terminal(p)[0];
        (acc.0.min(x), acc.1.max(x))
    });
    model.solver_probe(grid.horizon(), x_probe.0, x_probe.1)?;
    driver.probe(grid.horizon(), x_probe.0, x_probe.1)?;

    let n = grid.steps();
    let mut u: Vec<f64> = (0..m).map(|p| terminal(ensemble.terminal(p)[0])).collect();
    let mut slices: Vec<TimeSlice> = Vec::new();
    if snapshots.wants(&grid, n) {
        slices.push(TimeSlice { time: grid.horizon(), y: u.clone(), z: vec![0.0; m] });
    }

    let mut max_condition: f64 = 0.0;
    let mut picard_max = 0u32;
    let mut picard_total = 0u64;
    let mut se = 0.0;

    for i in (0..n).rev() {
        let t = grid.time(i);
        let xs: Vec<f64> = (0..m).map(|p| ensemble.state(p, i)[0]).collect();
        let dws: Vec<f64> = (0..m).map(|p| ensemble.increment(p, i)[0]).collect();
        let zt: Vec<f64> = (0..m).map(|p| u[p] * dws[p] / h).collect();

        let (cont, zfit, cond) = match basis {
            BasisSpec::LocalBins { bins } => regress_bins(&xs, &u, &zt, *bins),
            BasisSpec::Polynomial { degree } => regress_poly(&xs, &u, &zt, *degree)?,
        };
        max_condition = max_condition.max(cond);
        if cond > CONDITION_LIMIT {
            return Err(Error::BasisIllConditioned { condition: cond });
        }

        let mut znew = vec![0.0f64; m];
        for p in 0..m {
            let v = zfit[p];
            let mut y = cont[p];
            let mut iters = 0u32;
            let mut residual = f64::INFINITY;
            while iters < PICARD_CAP {
                let y_next = cont[p] + h * driver.eval(t, xs[p], y, v);
                residual = (y_next - y).abs();
                y = y_next;
                iters += 1;
                if residual <= PICARD_TOL {
                    break;
                }
            }
            if residual > PICARD_CONTRACT_TOL {
                return Err(Error::PicardDiverged { t, residual });
            }
            picard_total += iters as u64;
            picard_max = picard_max.max(iters);
            u[p] = y;
            znew[p] = v;
        }

        if i == 0 {
            let mean = u.iter().sum::<f64>() / m as f64;
            let var = u.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m as f64 - 1.0);
            se = (var / m as f64).sqrt();
            // all paths start at the same point: the initial value is the plain mean
            u.fill(mean);
        }
        if snapshots.wants(&grid, i) {
            slices.push(TimeSlice { time: t, y: u.clone(), z: znew });
        }
    }

    slices.reverse();
    Ok(BsdeSolution {
        grid,
        representation: Representation::MonteCarlo { paths: m },
        slices,
        step_max_compensator: vec![0.0; n],
        diagnostics: SolveDiagnostics {
            picard_max_iters: picard_max as usize,
            picard_total_iters: picard_total,
            regression_max_condition: max_condition,
            standard_error: se,
        },
    })
}

/// Equal-count bins, per-bin affine fit for both targets. Bins whose state
/// spread collapses fall back to the bin mean.
fn regress_bins(xs: &[f64], t1: &[f64], t2: &[f64], bins: usize) -> (Vec<f64>, Vec<f64>, f64) {
    let m = xs.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap().then(a.cmp(&b)));

    let mut fit1 = vec![0.0; m];
    let mut fit2 = vec![0.0; m];
    let mut worst_cond: f64 = 1.0;
    let base = m / bins;
    let extra = m % bins;
    let mut start = 0usize;
    for b in 0..bins {
        let len = base + usize::from(b < extra);
        let idx = &order[start..start + len];
        start += len;
        let nb = len as f64;
        let mean_x = idx.iter().map(|&p| xs[p]).sum::<f64>() / nb;
        let mut sdd = 0.0;
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        let mut c1 = 0.0;
        let mut c2 = 0.0;
        for &p in idx {
            let d = xs[p] - mean_x;
            sdd += d * d;
            s1 += t1[p];
            s2 += t2[p];
            c1 += d * t1[p];
            c2 += d * t2[p];
        }
        let a1 = s1 / nb;
        let a2 = s2 / nb;
        let scale = 1.0 + mean_x * mean_x;
        let (b1, b2) = if sdd > 1e-13 * nb * scale {
            worst_cond = worst_cond.max(nb.max(sdd) / nb.min(sdd));
            (c1 / sdd, c2 / sdd)
        } else {
            (0.0, 0.0)
        };
        for &p in idx {
            let d = xs[p] - mean_x;
            fit1[p] = a1 + b1 * d;
            fit2[p] = a2 + b2 * d;
        }
    }
    (fit1, fit2, worst_cond)
}

/// Global polynomial fit on state normalized to [-1, 1], shared SVD for both
/// targets.
fn regress_poly(
    xs: &[f64],
    t1: &[f64],
    t2: &[f64],
    degree: usize,
) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let m = xs.len();
    let k = degree + 1;
    let (lo, hi) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |a, &x| (a.0.min(x), a.1.max(x)));
    let span = (hi - lo).max(1e-300);
    let norm = |x: f64| 2.0 * (x - lo) / span - 1.0;

    let mut design = DMatrix::<f64>::zeros(m, k);
    for (r, &x) in xs.iter().enumerate() {
        let xn = norm(x);
        let mut pw = 1.0;
        for c in 0..k {
            design[(r, c)] = pw;
            pw *= xn;
        }
    }
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if cond > CONDITION_LIMIT {
        return Err(Error::BasisIllConditioned { condition: cond });
    }
    let sol1 = svd
        .solve(&DVector::from_column_slice(t1), 1e-12)
        .map_err(|e| Error::InvalidInput(format!("regression solve failed: {e}")))?;
    let sol2 = svd
        .solve(&DVector::from_column_slice(t2), 1e-12)
        .map_err(|e| Error::InvalidInput(format!("regression solve failed: {e}")))?;
    let f1 = &design * &sol1;
    let f2 = &design * &sol2;
    Ok((f1.as_slice().to_vec(), f2.as_slice().to_vec(), cond))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TimeGrid;
    use crate::payoff::PayoffSpec;
    use crate::sde::simulate;

    fn brownian() -> SdeModel {
        SdeModel::brownian(1.0)
    }

    #[test]
    fn martingale_within_standard_error() {
        let grid = TimeGrid::new(0.0, 1.0, 25).unwrap();
        let ens = simulate(&brownian(), &[0.3], &grid, None, 20_000, 21).unwrap();
        let sol = solve_lsmc(
            &brownian(),
            &DriverSpec::zero(),
            &|x| x,
            &ens,
            &BasisSpec::default(),
            &SnapshotSpec::Times(vec![]),
        )
        .unwrap();
        let y = sol.initial_value(0.3);
        let se = sol.diagnostics.standard_error.max(1e-6);
        assert!((y - 0.3).abs() < 3.0 * se, "Y = {y}, se = {se}");
    }

    #[test]
    fn exponential_driver_within_two_percent() {
        let grid = TimeGrid::new(0.0, 1.0, 50).unwrap();
        let ens = simulate(&brownian(), &[0.0], &grid, None, 50_000, 33).unwrap();
        let sol = solve_lsmc(
            &brownian(),
            &DriverSpec::linear(1.0, 0.0, 0.0),
            &|_| 1.0,
            &ens,
            &BasisSpec::default(),
            &SnapshotSpec::Times(vec![]),
        )
        .unwrap();
        let y = sol.initial_value(0.0);
        let e = std::f64::consts::E;
        assert!((y - e).abs() / e < 0.02, "Y = {y}");
    }

    #[test]
    fn digital_agrees_with_lattice_backend() {
        use crate::lattice::{solve_lattice, Lattice1D};
        let grid = TimeGrid::new(0.0, 1.0, 50).unwrap();
        let g = PayoffSpec::digital(1.0);
        let ens = simulate(&brownian(), &[0.5], &grid, None, 50_000, 8).unwrap();
        let mc = solve_lsmc(
            &brownian(),
            &DriverSpec::zero(),
            &|x| g.eval(x),
            &ens,
            &BasisSpec::default(),
            &SnapshotSpec::Times(vec![]),
        )
        .unwrap();
        let lat = solve_lattice(
            &brownian(),
            &DriverSpec::zero(),
            &|x| g.eval(x),
            &grid,
            &Lattice1D::new(-5.0, 6.0, 1101),
            &SnapshotSpec::Times(vec![]),
        )
        .unwrap();
        let tol = (3.0 * mc.diagnostics.standard_error).max(1e-2);
        let gap = (mc.initial_value(0.5) - lat.initial_value(0.5)).abs();
        assert!(gap < tol, "gap {gap} vs tol {tol}");
    }

    #[test]
    fn polynomial_basis_works_and_rejects_absurd_degree() {
        let grid = TimeGrid::new(0.0, 1.0, 10).unwrap();
        let ens = simulate(&brownian(), &[0.0], &grid, None, 4000, 5).unwrap();
        let ok = solve_lsmc(
            &brownian(),
            &DriverSpec::zero(),
            &|x| x,
            &ens,
            &BasisSpec::Polynomial { degree: 3 },
            &SnapshotSpec::Times(vec![]),
        )
        .unwrap();
        assert!((ok.initial_value(0.0)).abs() < 0.05);
        let bad = solve_lsmc(
            &brownian(),
            &DriverSpec::zero(),
            &|x| x,
            &ens,
            &BasisSpec::Polynomial { degree: 40 },
            &SnapshotSpec::Times(vec![]),
        );
        assert!(bad.is_err());
    }
}
