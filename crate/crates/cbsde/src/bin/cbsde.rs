//! Command-line front end: config-driven face-lifting, constrained solving,
//! dual bounds, and the regularity verification suite.
//!
//! Exit codes: 0 success or inconclusive, 1 verification failure, 2 invalid
//! input.

use clap::{Args, Parser, Subcommand};
use cbsde::config::{resolve_config, ExperimentConfig};
use cbsde::error::Error;
use cbsde::runner;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "cbsde", version, about = "constrained BSDE solver and verification harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON experiment config (merged over --fixture when both are given).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Name of a built-in fixture (digital-box1, clamp-unconstrained,
    /// cone-footnote, digital-box1-negative).
    #[arg(long)]
    fixture: Option<String>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker thread count (results are independent of it).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Tabulate the face-lifted terminal condition and emit CSV + metadata.
    Facelift(Common),
    /// Run the penalized monotone-limit solver; emit convergence diagnostics
    /// and the value surface.
    Solve(Common),
    /// Strong (and optionally weak) dual lower bounds with the best policy.
    Dual(Common),
    /// Full regularity verification suite; exit 1 when any section fails.
    Verify(Common),
}

fn load(common: &Common) -> Result<ExperimentConfig, Error> {
    let overlay = match &common.config {
        Some(path) => Some(std::fs::read_to_string(path)?),
        None => None,
    };
    let mut cfg = resolve_config(common.fixture.as_deref(), overlay.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(workers) = common.workers {
        cfg.workers = workers;
    }
    if common.config.is_none() && common.fixture.is_none() {
        return Err(Error::Config("provide --config, --fixture, or both".into()));
    }
    Ok(cfg)
}

fn install_pool(cfg: &ExperimentConfig) {
    let threads = cfg.workers.max(1);
    // global pool; ignore the error if a pool is already installed
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Facelift(common) => {
            let cfg = load(&common)?;
            install_pool(&cfg);
            let out = runner::run_facelift(&cfg, &common.out)?;
            println!(
                "facelift: {} nodes, Lipschitz estimate {:.6}, idempotence residual {:.3e}",
                out.lifted.x_grid.len(),
                out.lifted.lipschitz_estimate,
                out.lifted.residual_idempotence
            );
            for f in &out.files {
                println!("wrote {}", f.display());
            }
            Ok(0)
        }
        Command::Solve(common) => {
            let cfg = load(&common)?;
            install_pool(&cfg);
            let out = runner::run_solve(&cfg, &common.out)?;
            println!("solve: Y(t0, x0) = {:.8}", out.y0);
            for l in &out.diag.levels {
                println!(
                    "  level n={:<8} Y0={:.8} violation_fraction={:.4}",
                    l.level, l.y0, l.violation_fraction
                );
            }
            println!(
                "  converged={} min_monotone_gap={:.3e} steps={}",
                out.diag.converged, out.diag.monotonicity_min_gap, out.diag.effective_steps
            );
            for f in &out.files {
                println!("wrote {}", f.display());
            }
            Ok(0)
        }
        Command::Dual(common) => {
            let cfg = load(&common)?;
            install_pool(&cfg);
            let out = runner::run_dual(&cfg, &common.out)?;
            println!(
                "dual: value = {:.8} (raw terminal), face-lifted variant = {:.8}",
                out.dual.value, out.dual.facelift_version
            );
            if let Some((w, se)) = out.weak {
                println!("  weak value = {w:.8} (se {se:.2e})");
            }
            for f in &out.files {
                println!("wrote {}", f.display());
            }
            Ok(0)
        }
        Command::Verify(common) => {
            let cfg = load(&common)?;
            install_pool(&cfg);
            let out = runner::run_verify(&cfg, &common.out)?;
            for s in &out.report.space {
                println!(
                    "space t={:.4}: violations={} of {} pairs, fitted Lipschitz {:.4} -> {}",
                    s.time,
                    s.violations,
                    s.pair_count,
                    s.fitted_lipschitz,
                    verdict(s.passed)
                );
            }
            for t in &out.report.time {
                if t.inconclusive {
                    println!("time  x={:.4}: inconclusive (below tolerance floor)", t.x);
                } else {
                    println!(
                        "time  x={:.4}: slope {:.4} (se {:.4}) -> {}",
                        t.x,
                        t.slope,
                        t.stderr,
                        verdict(t.passed)
                    );
                }
            }
            if let Some(term) = &out.report.terminal {
                println!(
                    "terminal: facelift slope {:.4}, raw slope {:.4}, negative control rejected={} -> {}",
                    term.slope_facelift,
                    term.slope_raw,
                    term.negative_control_rejected,
                    verdict(term.passed)
                );
            }
            if let Some(c) = &out.report.compensator {
                println!("compensator continuity proxy -> {}", verdict(c.passed));
            }
            if let Some(s) = &out.report.self_facelift {
                println!(
                    "self-face-lift at theta={:.4}: residual {:.3e} (tol {:.3e}) -> {}",
                    s.theta,
                    s.max_residual,
                    s.tolerance,
                    verdict(s.passed)
                );
            }
            for f in &out.files {
                println!("wrote {}", f.display());
            }
            println!("verify: {}", verdict(out.report.all_passed));
            Ok(if out.report.all_passed { 0 } else { 1 })
        }
    }
}

fn verdict(passed: bool) -> &'static str {
    if passed {
        "PASS"
    } else {
        "FAIL"
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
