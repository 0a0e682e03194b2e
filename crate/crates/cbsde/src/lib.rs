//! Backward SDEs with convex gains-process constraints.
//!
//! The library computes the minimal super-solution of
//!
//! ```text
//! Y_t = g(X_T) + ∫_t^T f(X_s, Y_s, Z_s) ds − ∫_t^T Z_s dW_s + K_T − K_t,
//! Z σ(X)⁻¹ ∈ K_t   dt⊗dP-a.e.,
//! ```
//!
//! by penalization with an increasing driver term `n·dist(Zσ⁻¹, K_t)`, and
//! certifies it from below by a dual search over bounded piecewise-constant
//! drift controls whose driver pays the support function `δ_t(ν_t)`. The
//! face-lift `ĝ(x) = sup_u (g(x+u) − δ_T(u))` supplies the effective terminal
//! condition, and a verification harness fits the solution's space/time
//! moduli (Lipschitz and ½-Hölder) and the terminal face-lift limit.
//!
//! Entry points:
//! - [`constraint::ConstraintFamily`] — convex sets, support functions,
//!   projections;
//! - [`facelift::facelift`] — tabulated sup-convolution with a certified
//!   search radius;
//! - [`lattice::solve_lattice`] / [`lsmc::solve_lsmc`] — unconstrained
//!   backward solvers;
//! - [`penalty::solve_minimal`] — the penalized monotone limit;
//! - [`dual::strong_dual_value`] / [`dual::weak_dual_value`] — certified
//!   lower bounds;
//! - [`regularity`] — the verification report;
//! - [`runner`] — config-driven experiment commands backing the `cbsde` CLI.

pub mod config;
pub mod constraint;
pub mod control;
pub mod driver;
pub mod dual;
pub mod error;
pub mod facelift;
pub mod grid;
pub mod lattice;
pub mod lsmc;
pub mod payoff;
pub mod penalty;
pub mod quad;
pub mod regularity;
pub mod report;
pub mod rng;
pub mod runner;
pub mod sde;
pub mod solution;

pub use constraint::{ConstraintBase, ConstraintFamily, ShrinkSchedule, SupportValue};
pub use control::{ControlPolicy, PolicyValues};
pub use driver::{linear_closed_form, DriverKind, DriverSpec};
pub use error::{Error, Result};
pub use facelift::{facelift, is_selffacelifted, FaceliftOptions, FaceliftedPayoff};
pub use grid::TimeGrid;
pub use lattice::{solve_lattice, Lattice1D};
pub use lsmc::{solve_lsmc, BasisSpec};
pub use payoff::{PayoffKind, PayoffSpec};
pub use penalty::{solve_minimal, solve_penalized, Backend, PenaltySchedule};
pub use sde::{simulate, ConstraintMode, DiffusionSpec, DriftSpec, PathEnsemble, SdeModel};
pub use solution::{BsdeSolution, SnapshotSpec};
