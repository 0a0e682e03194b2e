//! Config-driven experiment orchestration behind the CLI subcommands.

use crate::config::{BackendConfig, DriverConfig, ExperimentConfig, SearchModeConfig};
use crate::dual::{
    dual_table_at, strong_dual_value, weak_dual_value, DualSearchSpec, DualValue, SearchMode,
};
use crate::error::{Error, Result};
use crate::facelift::{facelift, is_selffacelifted, uniform_grid, FaceliftOptions, FaceliftedPayoff};
use crate::grid::TimeGrid;
use crate::lattice::Lattice1D;
use crate::payoff::PayoffKind;
use crate::penalty::{solve_minimal, solve_penalized, Backend, ConvergenceDiag, PenaltySchedule};
use crate::regularity::{
    compensator_refinement, space_modulus, terminal_limit, time_modulus, RegularityReport,
    SelfFaceliftSection,
};
use crate::report::{fmt_f64, write_csv, write_json, write_svg, LogLogChart, ARTIFACT_VERSION};
use crate::sde::ConstraintMode;
use crate::solution::{Representation, SnapshotSpec};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// JSON envelope so every document carries the hash and version.
#[derive(Serialize)]
struct Document<'a, T: Serialize> {
    config_hash: &'a str,
    artifact_version: &'a str,
    #[serde(flatten)]
    payload: T,
}

fn ensure_out(out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    Ok(())
}

fn write_run_log(out_dir: &Path, what: &str, hash: &str, started: Instant) -> Result<()> {
    // wall-clock sidecar, deliberately outside the deterministic outputs
    let text = format!(
        "command={what}\nconfig_hash={hash}\nartifact_version={ARTIFACT_VERSION}\nruntime_ms={}\n",
        started.elapsed().as_millis()
    );
    std::fs::write(out_dir.join("run_log.txt"), text)?;
    Ok(())
}

fn facelift_options(cfg: &ExperimentConfig) -> FaceliftOptions {
    let terminal_scale = match cfg.model.mode {
        ConstraintMode::Gains => 1.0,
        ConstraintMode::Direct => cfg.model.sigma1(cfg.grid.horizon, 0.0),
    };
    FaceliftOptions {
        u_radius: cfg.facelift_grid.u_radius,
        u_step: cfg.facelift_grid.u_step,
        terminal_scale: Some(terminal_scale),
    }
}

pub fn compute_facelift(cfg: &ExperimentConfig) -> Result<FaceliftedPayoff> {
    let family = cfg.family()?;
    let grid = uniform_grid(
        cfg.facelift_grid.x_lo,
        cfg.facelift_grid.x_hi,
        cfg.facelift_grid.nodes,
    )?;
    facelift(&cfg.payoff, &family, &grid, &facelift_options(cfg))
}

pub struct FaceliftOutcome {
    pub lifted: FaceliftedPayoff,
    pub files: Vec<PathBuf>,
}

#[derive(Serialize)]
struct FaceliftMeta {
    fixture: Option<String>,
    lipschitz_estimate: f64,
    search_radius: f64,
    radius_certified: bool,
    residual_idempotence: f64,
    idempotence_bound: f64,
}

pub fn run_facelift(cfg: &ExperimentConfig, out_dir: &Path) -> Result<FaceliftOutcome> {
    let started = Instant::now();
    ensure_out(out_dir)?;
    let hash = cfg.hash();
    let lifted = compute_facelift(cfg)?;

    let csv_path = out_dir.join("facelift.csv");
    write_csv(
        &csv_path,
        &hash,
        &["x", "g", "g_facelift"],
        lifted.x_grid.iter().enumerate().map(|(j, &x)| {
            vec![fmt_f64(x), fmt_f64(lifted.payoff[j]), fmt_f64(lifted.values[j])]
        }),
    )?;
    let u_step = lifted.grid_step() / 2.0;
    let meta = FaceliftMeta {
        fixture: cfg.fixture.clone(),
        lipschitz_estimate: lifted.lipschitz_estimate,
        search_radius: lifted.search_radius,
        radius_certified: lifted.radius_certified,
        residual_idempotence: lifted.residual_idempotence,
        idempotence_bound: 2.0 * u_step * lifted.lipschitz_estimate,
    };
    let json_path = out_dir.join("facelift.json");
    write_json(
        &json_path,
        &Document { config_hash: &hash, artifact_version: ARTIFACT_VERSION, payload: meta },
    )?;
    write_run_log(out_dir, "facelift", &hash, started)?;
    Ok(FaceliftOutcome { lifted, files: vec![csv_path, json_path] })
}

pub struct SolveOutcome {
    pub y0: f64,
    pub diag: ConvergenceDiag,
    pub files: Vec<PathBuf>,
}

#[derive(Serialize)]
struct SolveMeta<'a> {
    fixture: Option<String>,
    y0: f64,
    #[serde(flatten)]
    diag: &'a ConvergenceDiag,
}

pub fn run_solve(cfg: &ExperimentConfig, out_dir: &Path) -> Result<SolveOutcome> {
    let started = Instant::now();
    ensure_out(out_dir)?;
    let hash = cfg.hash();
    let family = cfg.family()?;
    let grid = cfg.grid.to_grid()?;
    let driver = cfg.driver.to_spec();
    let schedule = cfg.penalty.to_schedule();
    let backend = cfg.backend();
    let span = grid.horizon() - grid.t0();
    let snapshots =
        SnapshotSpec::Times(vec![grid.t0(), grid.t0() + 0.5 * span]);
    let out = solve_minimal(
        &cfg.model,
        &driver,
        &cfg.payoff,
        &family,
        &schedule,
        &backend,
        &grid,
        cfg.x0,
        &snapshots,
    )?;
    let y0 = out.solution.initial_value(cfg.x0);

    let json_path = out_dir.join("convergence.json");
    write_json(
        &json_path,
        &Document {
            config_hash: &hash,
            artifact_version: ARTIFACT_VERSION,
            payload: SolveMeta { fixture: cfg.fixture.clone(), y0, diag: &out.diag },
        },
    )?;
    let csv_path = out_dir.join("y_surface.csv");
    match &out.solution.representation {
        Representation::Lattice { x_nodes } => {
            write_csv(
                &csv_path,
                &hash,
                &["time", "x", "y", "z"],
                out.solution.slices.iter().flat_map(|s| {
                    let t = s.time;
                    x_nodes.iter().zip(s.y.iter().zip(&s.z)).map(move |(&x, (&y, &z))| {
                        vec![fmt_f64(t), fmt_f64(x), fmt_f64(y), fmt_f64(z)]
                    })
                }),
            )?;
        }
        Representation::MonteCarlo { .. } => {
            write_csv(
                &csv_path,
                &hash,
                &["time", "path", "y", "z"],
                out.solution.slices.iter().flat_map(|s| {
                    let t = s.time;
                    s.y.iter().zip(&s.z).enumerate().map(move |(p, (&y, &z))| {
                        vec![fmt_f64(t), p.to_string(), fmt_f64(y), fmt_f64(z)]
                    })
                }),
            )?;
        }
    }
    write_run_log(out_dir, "solve", &hash, started)?;
    Ok(SolveOutcome { y0, diag: out.diag, files: vec![json_path, csv_path] })
}

fn dual_search_spec(cfg: &ExperimentConfig) -> DualSearchSpec {
    let mode = match cfg.dual.search {
        SearchModeConfig::Constant => SearchMode::Constant,
        SearchModeConfig::CoordinateAscent { blocks } => SearchMode::CoordinateAscent { blocks },
        SearchModeConfig::Feedback { blocks, bins } => SearchMode::Feedback { blocks, bins },
    };
    DualSearchSpec {
        nu_max: cfg.dual.nu_max.unwrap_or(8.0 * cfg.model.bound),
        candidates: cfg.dual.candidates,
        mode,
    }
}

/// The dual evaluations are unpenalized, so they run on a coarser grid than
/// the penalty schedule demands.
fn dual_grid_and_backend(cfg: &ExperimentConfig) -> Result<(TimeGrid, Backend)> {
    let grid = cfg.grid.to_grid()?;
    let steps = cfg.dual.steps.unwrap_or_else(|| grid.steps().min(256));
    let dual_grid = grid.with_steps(steps)?;
    let backend = match &cfg.backend {
        BackendConfig::Lattice => {
            let lat = cfg.lattice.to_lattice();
            let nodes = lat.nodes.min(1101);
            Backend::Lattice(Lattice1D { nodes, ..lat })
        }
        BackendConfig::Lsmc { paths, basis } => Backend::Lsmc {
            paths: *paths,
            basis: basis.clone(),
            seed: cfg.seed,
            x0: cfg.x0,
        },
    };
    Ok((dual_grid, backend))
}

pub struct DualOutcome {
    pub dual: DualValue,
    pub weak: Option<(f64, f64)>,
    pub files: Vec<PathBuf>,
}

#[derive(Serialize)]
struct DualMeta<'a> {
    fixture: Option<String>,
    value: f64,
    g_version: f64,
    facelift_version: f64,
    evaluations: usize,
    weak_value: Option<f64>,
    weak_standard_error: Option<f64>,
    best_policy: &'a crate::control::ControlPolicy,
    best_policy_lifted: &'a crate::control::ControlPolicy,
}

pub fn run_dual(cfg: &ExperimentConfig, out_dir: &Path) -> Result<DualOutcome> {
    let started = Instant::now();
    ensure_out(out_dir)?;
    let hash = cfg.hash();
    let family = cfg.family()?;
    let lifted = compute_facelift(cfg)?;
    let driver = cfg.driver.to_spec();
    let (grid, backend) = dual_grid_and_backend(cfg)?;
    let search = dual_search_spec(cfg);

    let dual = strong_dual_value(
        &cfg.model,
        &driver,
        &cfg.payoff,
        &lifted,
        &family,
        &search,
        &backend,
        &grid,
        cfg.x0,
    )?;

    let weak = if cfg.dual.weak_paths > 0 && matches!(cfg.driver, DriverConfig::Zero | DriverConfig::Linear { .. })
    {
        let policy = if dual.best_policy.is_deterministic() {
            dual.best_policy.clone()
        } else {
            crate::control::ControlPolicy::zero(grid)
        };
        match weak_dual_value(
            &cfg.model,
            &driver,
            &cfg.payoff,
            &family,
            &policy,
            &grid,
            cfg.x0,
            cfg.dual.weak_paths,
            cfg.seed,
        ) {
            Ok(v) => Some(v),
            Err(Error::InvalidInput(_)) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };

    let json_path = out_dir.join("dual.json");
    write_json(
        &json_path,
        &Document {
            config_hash: &hash,
            artifact_version: ARTIFACT_VERSION,
            payload: DualMeta {
                fixture: cfg.fixture.clone(),
                value: dual.value,
                g_version: dual.g_version,
                facelift_version: dual.facelift_version,
                evaluations: dual.evaluations,
                weak_value: weak.map(|w| w.0),
                weak_standard_error: weak.map(|w| w.1),
                best_policy: &dual.best_policy,
                best_policy_lifted: &dual.best_policy_lifted,
            },
        },
    )?;
    let policy_path = out_dir.join("policy.json");
    write_json(
        &policy_path,
        &Document {
            config_hash: &hash,
            artifact_version: ARTIFACT_VERSION,
            payload: &dual.best_policy,
        },
    )?;
    write_run_log(out_dir, "dual", &hash, started)?;
    Ok(DualOutcome { dual, weak, files: vec![json_path, policy_path] })
}

pub struct VerifyOutcome {
    pub report: RegularityReport,
    pub files: Vec<PathBuf>,
}

fn payoff_kink_guess(cfg: &ExperimentConfig) -> f64 {
    match &cfg.payoff.kind {
        PayoffKind::Call { strike } | PayoffKind::Put { strike } | PayoffKind::Digital { strike } => {
            *strike
        }
        PayoffKind::Clamp { hi, .. } => *hi,
        PayoffKind::Tabulated { xs, .. } => xs.get(xs.len() / 2).copied().unwrap_or(0.0),
    }
}

pub fn run_verify(cfg: &ExperimentConfig, out_dir: &Path) -> Result<VerifyOutcome> {
    let started = Instant::now();
    ensure_out(out_dir)?;
    let hash = cfg.hash();
    let family = cfg.family()?;
    let grid = cfg.grid.to_grid()?;
    let driver = cfg.driver.to_spec();
    let schedule = cfg.penalty.to_schedule();
    let backend = cfg.backend();
    if !matches!(backend, Backend::Lattice(_)) {
        return Err(Error::Config("verification needs the lattice backend".into()));
    }
    let span = grid.horizon() - grid.t0();
    let horizon = grid.horizon();

    let lifted = compute_facelift(cfg)?;

    // snapshot plan: dyadic separations, terminal offsets, space times
    let taus: Vec<f64> = (1..=cfg.verify.dyadic_levels).map(|k| span / (1u64 << k) as f64).collect();
    let offsets: Vec<f64> = cfg.verify.terminal_offsets.iter().map(|f| f * span).collect();
    let space_times: Vec<f64> =
        cfg.verify.space_times.iter().map(|f| grid.t0() + f * span).collect();
    let mut snap_times = space_times.clone();
    snap_times.extend(taus.iter().map(|&tau| horizon - tau));
    snap_times.extend(offsets.iter().map(|&h| horizon - h));

    let solved = solve_minimal(
        &cfg.model,
        &driver,
        &cfg.payoff,
        &family,
        &schedule,
        &backend,
        &grid,
        cfg.x0,
        &SnapshotSpec::Times(snap_times),
    )?;
    let solver_tol = if solved.diag.reported_tolerance.is_finite() {
        solved.diag.reported_tolerance.max(1e-9)
    } else {
        1e-3
    };

    let mut report = RegularityReport::empty(
        ARTIFACT_VERSION,
        &hash,
        cfg.fixture.as_deref().unwrap_or("custom"),
    );
    report.solver_tolerance = solver_tol;

    // space sections
    let window = (cfg.x0 - cfg.verify.window_halfwidth, cfg.x0 + cfg.verify.window_halfwidth);
    for &t in &space_times {
        report.space.push(space_modulus(
            &solved.solution,
            &family,
            t,
            window,
            2.0 * solver_tol,
        )?);
    }

    // time sections
    let xs_modulus = cfg
        .verify
        .modulus_x
        .clone()
        .unwrap_or_else(|| vec![payoff_kink_guess(cfg), cfg.x0]);
    for &x in &xs_modulus {
        report.time.push(time_modulus(&solved.solution, x, &taus, 5.0 * solver_tol)?);
    }

    // terminal limit
    report.terminal = Some(terminal_limit(
        &solved.solution,
        &cfg.payoff,
        &lifted,
        &offsets,
        window,
        cfg.verify.compare,
    )?);

    // compensator continuity proxy at a moderate penalty level
    {
        let proxy_level = schedule.levels.iter().copied().fold(f64::NAN, |acc, l| {
            if acc.is_nan() || (l - 16.0).abs() < (acc - 16.0).abs() {
                l
            } else {
                acc
            }
        });
        let base = schedule.required_steps(span, driver.lipschitz, cfg.model.bound, proxy_level);
        let mut runs = Vec::new();
        for mult in [1usize, 2, 4] {
            let g = grid.with_steps(base * mult)?;
            runs.push(solve_penalized(
                &cfg.model,
                &driver,
                &cfg.payoff,
                &family,
                proxy_level,
                &backend,
                &g,
                &SnapshotSpec::Times(vec![]),
            )?);
        }
        let sols: Vec<&crate::solution::BsdeSolution> =
            runs.iter().map(|r| &r.solution).collect();
        report.compensator = Some(compensator_refinement(&sols)?);
    }

    // self-face-lift of the dual table at the midpoint
    {
        let theta = grid.t0() + 0.5 * span;
        let lat = match &backend {
            Backend::Lattice(l) => l.clone(),
            _ => unreachable!(),
        };
        let search = DualSearchSpec {
            nu_max: cfg.dual.nu_max.unwrap_or(8.0 * cfg.model.bound),
            candidates: 3,
            mode: SearchMode::Constant,
        };
        let (xs, table) =
            dual_table_at(&cfg.model, &driver, &cfg.payoff, &family, theta, &search, &lat, horizon)?;
        let tol = 2.0 * (solver_tol + lat.dx());
        let check = is_selffacelifted(&xs, &table, &family, theta, tol)?;
        report.self_facelift = Some(SelfFaceliftSection {
            theta,
            max_residual: check.max_residual,
            tolerance: tol,
            passed: check.passed,
        });
    }

    report.recompute_flag();

    // emit
    let mut files = Vec::new();
    let report_path = out_dir.join("report.json");
    write_json(&report_path, &report)?;
    files.push(report_path);

    let space_csv = out_dir.join("space_pairs.csv");
    write_csv(
        &space_csv,
        &hash,
        &["time", "x", "x2", "y", "y2", "delta_fwd", "delta_bwd"],
        report.space.iter().flat_map(|s| {
            let t = s.time;
            s.pairs.iter().map(move |p| {
                vec![
                    fmt_f64(t),
                    fmt_f64(p.x),
                    fmt_f64(p.x2),
                    fmt_f64(p.y),
                    fmt_f64(p.y2),
                    fmt_f64(p.delta_fwd),
                    fmt_f64(p.delta_bwd),
                ]
            })
        }),
    )?;
    files.push(space_csv);

    let time_csv = out_dir.join("time_pairs.csv");
    write_csv(
        &time_csv,
        &hash,
        &["x", "t", "t2", "y", "y2"],
        report.time.iter().flat_map(|s| {
            s.pairs.iter().map(|p| {
                vec![fmt_f64(p.x), fmt_f64(p.t), fmt_f64(p.t2), fmt_f64(p.y), fmt_f64(p.y2)]
            })
        }),
    )?;
    files.push(time_csv);

    let term_csv = out_dir.join("terminal_table.csv");
    if let Some(term) = &report.terminal {
        write_csv(
            &term_csv,
            &hash,
            &["h", "err_facelift", "err_raw"],
            term.table.iter().map(|r| {
                vec![fmt_f64(r.h), fmt_f64(r.err_facelift), fmt_f64(r.err_raw)]
            }),
        )?;
        files.push(term_csv);
    }

    // charts: the first conclusive time fit and the terminal decay
    if let Some(ts) = report.time.iter().find(|t| !t.inconclusive) {
        let pts: Vec<(f64, f64)> = ts
            .pairs
            .iter()
            .map(|p| ((p.t2 - p.t).abs(), (p.y2 - p.y).abs()))
            .filter(|(a, b)| *a > 0.0 && *b > 0.0)
            .collect();
        if pts.len() >= 2 {
            let svg_path = out_dir.join("time_modulus.svg");
            write_svg(
                &svg_path,
                &LogLogChart {
                    title: "time modulus |Y(t,x)-Y(t',x)| vs |t-t'|",
                    x_label: "|t-t'|",
                    y_label: "|dY|",
                    points: &pts,
                    slope: ts.slope,
                    config_hash: &hash,
                },
            )?;
            files.push(svg_path);
        }
    }
    if let Some(term) = &report.terminal {
        let pts: Vec<(f64, f64)> =
            term.table.iter().map(|r| (r.h, r.err_facelift)).filter(|(_, e)| *e > 0.0).collect();
        if pts.len() >= 2 {
            let svg_path = out_dir.join("terminal_limit.svg");
            write_svg(
                &svg_path,
                &LogLogChart {
                    title: "terminal face-lift limit max|Y(T-h)-g_lift| vs h",
                    x_label: "h",
                    y_label: "max error",
                    points: &pts,
                    slope: term.slope_facelift,
                    config_hash: &hash,
                },
            )?;
            files.push(svg_path);
        }
    }

    write_run_log(out_dir, "verify", &hash, started)?;
    Ok(VerifyOutcome { report, files })
}
