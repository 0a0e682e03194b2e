//! Error types shared across the crate.

use thiserror::Error;

/// Library-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A time argument fell outside the family's horizon `[0, T]`.
    #[error("time {t} outside the valid horizon [0, {horizon}]")]
    TimeOutOfHorizon { t: f64, horizon: f64 },

    /// Projection/distance requested on a constraint base the solver cannot handle.
    #[error("unsupported constraint for this operation: {0}")]
    UnsupportedConstraint(String),

    /// A model failed its declared bound or Lipschitz probe.
    #[error("model bounds probe failed: {0}")]
    ModelBounds(String),

    /// A driver failed its declared Lipschitz/growth probe.
    #[error("driver probe failed: {0}")]
    DriverBounds(String),

    /// The face-lift search grid cannot certify the maximizer location.
    #[error("insufficient face-lift search radius: supplied {supplied}, required {required}")]
    InsufficientSearchRadius { supplied: f64, required: f64 },

    /// The per-step Picard iteration did not contract to tolerance.
    #[error("Picard iteration did not converge at t={t} (residual {residual:.3e}); reduce the time step")]
    PicardDiverged { t: f64, residual: f64 },

    /// Step size violates the contraction margin h*L < 1/2.
    #[error("step size h={h:.3e} too large for driver Lipschitz constant {lipschitz:.3e} (need h*L < 1/2)")]
    StepSizeTooLarge { h: f64, lipschitz: f64 },

    /// A least-squares regression was too ill-conditioned to trust.
    #[error("regression basis ill-conditioned (condition number {condition:.3e})")]
    BasisIllConditioned { condition: f64 },

    /// A control policy hit an infinite support-function value.
    #[error("inadmissible control: support function is infinite at interval {interval}")]
    InadmissibleControl { interval: usize },

    /// Bad arguments that do not fit a more specific category.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Configuration file problems (parse errors, unknown keys, bad values).
    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
