//! Experiment configuration: a strict JSON schema (unknown keys are errors),
//! named built-in fixtures, fixture/override merging, and the config hash
//! embedded in every output.

use crate::constraint::{ConstraintBase, ConstraintFamily, ShrinkSchedule};
use crate::driver::DriverSpec;
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::lattice::Lattice1D;
use crate::lsmc::BasisSpec;
use crate::payoff::PayoffSpec;
use crate::penalty::{Backend, PenaltySchedule};
use crate::regularity::TerminalCompare;
use crate::sde::SdeModel;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "kebab-case")]
pub enum DriverConfig {
    Zero,
    Linear { alpha: f64, beta: f64, c: f64 },
}

impl DriverConfig {
    pub fn to_spec(&self) -> DriverSpec {
        match *self {
            DriverConfig::Zero => DriverSpec::zero(),
            DriverConfig::Linear { alpha, beta, c } => DriverSpec::linear(alpha, beta, c),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintConfig {
    #[serde(flatten)]
    pub base: ConstraintBase,
    /// Shrink knots `(t, s)`; flat over the grid horizon when omitted.
    #[serde(default)]
    pub shrink: Option<Vec<(f64, f64)>>,
}

impl ConstraintConfig {
    pub fn to_family(&self, horizon: f64) -> Result<ConstraintFamily> {
        let dim = match &self.base {
            ConstraintBase::Box { lo, .. } => lo.len(),
            ConstraintBase::Ball { .. } => 1,
            ConstraintBase::HalfLineCone { direction } => direction.len(),
        };
        let shrink = match &self.shrink {
            Some(knots) => ShrinkSchedule { knots: knots.clone() },
            None => ShrinkSchedule::flat(horizon),
        };
        ConstraintFamily::new(self.base.clone(), shrink, dim)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default)]
    pub t0: f64,
    pub horizon: f64,
    pub steps: usize,
}

impl GridConfig {
    pub fn to_grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.t0, self.horizon, self.steps)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    pub x_lo: f64,
    pub x_hi: f64,
    pub nodes: usize,
    #[serde(default = "default_quad_order")]
    pub quad_order: usize,
}

fn default_quad_order() -> usize {
    8
}

impl LatticeConfig {
    pub fn to_lattice(&self) -> Lattice1D {
        Lattice1D { x_lo: self.x_lo, x_hi: self.x_hi, nodes: self.nodes, quad_order: self.quad_order }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub enum BackendConfig {
    Lattice,
    Lsmc { paths: usize, basis: BasisSpec },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltyConfig {
    #[serde(default = "default_levels")]
    pub levels: Vec<f64>,
    #[serde(default = "default_stop_tol")]
    pub stop_tol: f64,
    #[serde(default = "default_picard_margin")]
    pub picard_margin: f64,
    #[serde(default = "default_kink_factor")]
    pub kink_factor: Option<f64>,
}

fn default_levels() -> Vec<f64> {
    vec![4.0, 16.0, 64.0, 256.0]
}
fn default_stop_tol() -> f64 {
    1e-3
}
fn default_picard_margin() -> f64 {
    0.25
}
fn default_kink_factor() -> Option<f64> {
    Some(0.5)
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self {
            levels: default_levels(),
            stop_tol: default_stop_tol(),
            picard_margin: default_picard_margin(),
            kink_factor: default_kink_factor(),
        }
    }
}

impl PenaltyConfig {
    pub fn to_schedule(&self) -> PenaltySchedule {
        PenaltySchedule {
            levels: self.levels.clone(),
            stop_tol: self.stop_tol,
            picard_margin: self.picard_margin,
            kink_factor: self.kink_factor,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub enum SearchModeConfig {
    Constant,
    CoordinateAscent { blocks: usize },
    Feedback { blocks: usize, bins: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DualConfig {
    /// Defaults to `8 L` when omitted.
    #[serde(default)]
    pub nu_max: Option<f64>,
    #[serde(default = "default_candidates")]
    pub candidates: usize,
    #[serde(default = "default_search_mode")]
    pub search: SearchModeConfig,
    /// Monte Carlo paths for the weak evaluation; 0 disables it.
    #[serde(default = "default_weak_paths")]
    pub weak_paths: usize,
    /// Grid steps used by the dual evaluations (the dual solves are
    /// unpenalized, so they do not need the penalty step rule).
    #[serde(default)]
    pub steps: Option<usize>,
}

fn default_candidates() -> usize {
    5
}
fn default_search_mode() -> SearchModeConfig {
    SearchModeConfig::CoordinateAscent { blocks: 8 }
}
fn default_weak_paths() -> usize {
    100_000
}

impl Default for DualConfig {
    fn default() -> Self {
        Self {
            nu_max: None,
            candidates: default_candidates(),
            search: default_search_mode(),
            weak_paths: default_weak_paths(),
            steps: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    /// Times for the space-modulus sections.
    #[serde(default = "default_space_times")]
    pub space_times: Vec<f64>,
    /// States for the time-modulus sections (the payoff kink is the
    /// informative spot; the fixture center is usually below the floor).
    #[serde(default)]
    pub modulus_x: Option<Vec<f64>>,
    /// Dyadic separations `T/2^k`, `k = 1..=levels`.
    #[serde(default = "default_dyadic_levels")]
    pub dyadic_levels: usize,
    /// Terminal-limit offsets as fractions of the horizon.
    #[serde(default = "default_terminal_offsets")]
    pub terminal_offsets: Vec<f64>,
    #[serde(default = "default_compare")]
    pub compare: TerminalCompare,
    /// Window half-width around x0 for max-over-nodes studies.
    #[serde(default = "default_window_halfwidth")]
    pub window_halfwidth: f64,
}

fn default_space_times() -> Vec<f64> {
    vec![0.0, 0.5]
}
fn default_dyadic_levels() -> usize {
    8
}
fn default_terminal_offsets() -> Vec<f64> {
    vec![1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0]
}
fn default_compare() -> TerminalCompare {
    TerminalCompare::Facelift
}
fn default_window_halfwidth() -> f64 {
    2.0
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            space_times: default_space_times(),
            modulus_x: None,
            dyadic_levels: default_dyadic_levels(),
            terminal_offsets: default_terminal_offsets(),
            compare: default_compare(),
            window_halfwidth: default_window_halfwidth(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaceliftGridConfig {
    pub x_lo: f64,
    pub x_hi: f64,
    pub nodes: usize,
    #[serde(default)]
    pub u_radius: Option<f64>,
    #[serde(default)]
    pub u_step: Option<f64>,
}

/// Fully resolved experiment description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Name of the built-in this config was expanded from, if any.
    #[serde(default)]
    pub fixture: Option<String>,
    pub model: SdeModel,
    pub driver: DriverConfig,
    pub payoff: PayoffSpec,
    pub constraint: ConstraintConfig,
    pub x0: f64,
    pub grid: GridConfig,
    pub lattice: LatticeConfig,
    #[serde(default = "default_backend")]
    pub backend: BackendConfig,
    #[serde(default)]
    pub penalty: PenaltyConfig,
    #[serde(default)]
    pub dual: DualConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
    pub facelift_grid: FaceliftGridConfig,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

fn default_backend() -> BackendConfig {
    BackendConfig::Lattice
}
fn default_seed() -> u64 {
    12345
}
fn default_workers() -> usize {
    1
}

impl ExperimentConfig {
    pub fn family(&self) -> Result<ConstraintFamily> {
        self.constraint.to_family(self.grid.horizon)
    }

    pub fn backend(&self) -> Backend {
        match &self.backend {
            BackendConfig::Lattice => Backend::Lattice(self.lattice.to_lattice()),
            BackendConfig::Lsmc { paths, basis } => Backend::Lsmc {
                paths: *paths,
                basis: basis.clone(),
                seed: self.seed,
                x0: self.x0,
            },
        }
    }

    /// SHA-256 of the canonical serialized form.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        let digest = hasher.finalize();
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// Names of the built-in fixtures.
pub const FIXTURE_NAMES: &[&str] =
    &["digital-box1", "clamp-unconstrained", "cone-footnote", "digital-box1-negative"];

fn fixture_json(name: &str) -> Result<serde_json::Value> {
    let text = match name {
        // Superhedging benchmark: digital payoff, unit box constraint.
        "digital-box1" => {
            r##"{
            "fixture": "digital-box1",
            "model": { "dim": 1, "drift": {"kind":"zero"}, "diffusion": {"kind":"scalar","value":1.0}, "bound": 1.0, "mode": "gains" },
            "driver": { "kind": "zero" },
            "payoff": { "kind": "digital", "strike": 1.0, "bound": 1.0 },
            "constraint": { "base": "box", "lo": [-1.0], "hi": [1.0] },
            "x0": 0.5,
            "grid": { "t0": 0.0, "horizon": 1.0, "steps": 512 },
            "lattice": { "x_lo": -5.0, "x_hi": 6.0, "nodes": 4401 },
            "facelift_grid": { "x_lo": -3.0, "x_hi": 3.0, "nodes": 2401 },
            "verify": { "modulus_x": [1.0, 0.5] }
            }"##
        }
        // Already face-lifted terminal, effectively unconstrained.
        "clamp-unconstrained" => {
            r##"{
            "fixture": "clamp-unconstrained",
            "model": { "dim": 1, "drift": {"kind":"zero"}, "diffusion": {"kind":"scalar","value":1.0}, "bound": 1.0, "mode": "gains" },
            "driver": { "kind": "zero" },
            "payoff": { "kind": "clamp", "lo": 0.0, "hi": 1.0, "bound": 1.0 },
            "constraint": { "base": "box", "lo": [-1000.0], "hi": [1000.0] },
            "x0": 0.5,
            "grid": { "t0": 0.0, "horizon": 1.0, "steps": 2048 },
            "lattice": { "x_lo": -5.0, "x_hi": 6.0, "nodes": 2201 },
            "penalty": { "levels": [4.0], "kink_factor": null },
            "facelift_grid": { "x_lo": -3.0, "x_hi": 3.0, "nodes": 1201, "u_radius": 4.0 },
            "verify": { "modulus_x": [1.0, 0.0] }
            }"##
        }
        // The classical cone face-lift example: down-indicator payoff on the
        // positive half-line, constraint K = R_+; face-lift only.
        "cone-footnote" => {
            r##"{
            "fixture": "cone-footnote",
            "model": { "dim": 1, "drift": {"kind":"zero"}, "diffusion": {"kind":"scalar","value":1.0}, "bound": 1.0, "mode": "gains" },
            "driver": { "kind": "zero" },
            "payoff": { "kind": "tabulated",
                        "xs":     [0.0, 0.995, 1.0, 3.0],
                        "values": [1.0, 1.0,   0.0, 0.0],
                        "lsc": true, "bound": 1.0 },
            "constraint": { "base": "half-line-cone", "direction": [1.0] },
            "x0": 0.5,
            "grid": { "t0": 0.0, "horizon": 1.0, "steps": 64 },
            "lattice": { "x_lo": 0.0, "x_hi": 3.0, "nodes": 301 },
            "facelift_grid": { "x_lo": 0.0, "x_hi": 3.0, "nodes": 301, "u_radius": 3.5 }
            }"##
        }
        // Deliberate mis-specification: the terminal study compares against
        // the raw payoff; verification must reject it.
        "digital-box1-negative" => {
            r##"{
            "fixture": "digital-box1-negative",
            "model": { "dim": 1, "drift": {"kind":"zero"}, "diffusion": {"kind":"scalar","value":1.0}, "bound": 1.0, "mode": "gains" },
            "driver": { "kind": "zero" },
            "payoff": { "kind": "digital", "strike": 1.0, "bound": 1.0 },
            "constraint": { "base": "box", "lo": [-1.0], "hi": [1.0] },
            "x0": 0.5,
            "grid": { "t0": 0.0, "horizon": 1.0, "steps": 512 },
            "lattice": { "x_lo": -5.0, "x_hi": 6.0, "nodes": 4401 },
            "facelift_grid": { "x_lo": -3.0, "x_hi": 3.0, "nodes": 2401 },
            "verify": { "modulus_x": [1.0, 0.5], "compare": "raw-payoff" }
            }"##
        }
        other => {
            return Err(Error::Config(format!(
                "unknown fixture {other:?}; available: {FIXTURE_NAMES:?}"
            )))
        }
    };
    serde_json::from_str(text).map_err(|e| Error::Config(format!("fixture parse: {e}")))
}

/// Recursive object merge: `overlay` wins, objects merge key-wise.
fn merge_values(base: &mut serde_json::Value, overlay: serde_json::Value) {
    match (base, overlay) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge_values(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Build the resolved config from an optional fixture name and an optional
/// JSON overlay (file contents). The overlay may itself name a fixture.
pub fn resolve_config(
    fixture: Option<&str>,
    overlay_json: Option<&str>,
) -> Result<ExperimentConfig> {
    let overlay: Option<serde_json::Value> = match overlay_json {
        Some(text) => {
            Some(serde_json::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?)
        }
        None => None,
    };
    let fixture_name: Option<String> = match (fixture, &overlay) {
        (Some(f), _) => Some(f.to_string()),
        (None, Some(v)) => v
            .get("fixture")
            .and_then(|f| f.as_str())
            .map(|s| s.to_string()),
        (None, None) => None,
    };
    let mut value = match &fixture_name {
        Some(name) => fixture_json(name)?,
        None => serde_json::json!({}),
    };
    if let Some(o) = overlay {
        merge_values(&mut value, o);
    }
    if let Some(name) = fixture_name {
        merge_values(&mut value, serde_json::json!({ "fixture": name }));
    }
    serde_json::from_value(value).map_err(|e| Error::Config(format!("invalid config: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_all_resolve() {
        for name in FIXTURE_NAMES {
            let cfg = resolve_config(Some(name), None).unwrap();
            assert_eq!(cfg.fixture.as_deref(), Some(*name));
            assert!(cfg.family().is_ok());
        }
    }

    #[test]
    fn unknown_keys_are_hard_errors() {
        let overlay = r#"{ "fixture": "digital-box1", "grdi": {"steps": 10} }"#;
        let err = resolve_config(None, Some(overlay));
        assert!(err.is_err(), "typo must not be absorbed");
    }

    #[test]
    fn overlay_overrides_fixture_fields() {
        let overlay = r#"{ "fixture": "digital-box1", "seed": 99, "grid": {"steps": 64} }"#;
        let cfg = resolve_config(None, Some(overlay)).unwrap();
        assert_eq!(cfg.seed, 99);
        assert_eq!(cfg.grid.steps, 64);
        assert_eq!(cfg.grid.horizon, 1.0); // untouched fixture field survives
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = resolve_config(Some("digital-box1"), None).unwrap();
        let b = resolve_config(Some("digital-box1"), None).unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = resolve_config(None, Some(r#"{ "fixture": "digital-box1", "seed": 7 }"#)).unwrap();
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn unknown_fixture_is_an_error() {
        assert!(resolve_config(Some("no-such-fixture"), None).is_err());
    }
}
