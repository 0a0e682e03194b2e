//! BSDE driver specifications `f(t, x, y, z)` with declared Lipschitz
//! constants, and the linearization closed form used as an oracle for linear
//! drivers.

use crate::error::{Error, Result};
use std::fmt;
use std::sync::Arc;

/// Driver kinds. `Linear` means `f = α y + β z + c`; `Custom` carries an
/// arbitrary callback (one-dimensional in both x and z).
#[derive(Clone)]
pub enum DriverKind {
    Zero,
    Linear { alpha: f64, beta: f64, c: f64 },
    Custom(Arc<dyn Fn(f64, f64, f64, f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for DriverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DriverKind::Zero => write!(f, "Zero"),
            DriverKind::Linear { alpha, beta, c } => {
                write!(f, "Linear {{ alpha: {alpha}, beta: {beta}, c: {c} }}")
            }
            DriverKind::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DriverSpec {
    pub kind: DriverKind,
    /// Declared Lipschitz constant in `(y, z)`, also bounding `|f(·,0,0)|`.
    pub lipschitz: f64,
}

impl DriverSpec {
    pub fn zero() -> Self {
        Self { kind: DriverKind::Zero, lipschitz: 0.0 }
    }

    pub fn linear(alpha: f64, beta: f64, c: f64) -> Self {
        Self {
            kind: DriverKind::Linear { alpha, beta, c },
            lipschitz: alpha.abs().max(beta.abs()).max(c.abs()).max(1e-12),
        }
    }

    pub fn custom(
        f: impl Fn(f64, f64, f64, f64) -> f64 + Send + Sync + 'static,
        lipschitz: f64,
    ) -> Self {
        Self { kind: DriverKind::Custom(Arc::new(f)), lipschitz }
    }

    #[inline]
    pub fn eval(&self, t: f64, x: f64, y: f64, z: f64) -> f64 {
        match &self.kind {
            DriverKind::Zero => 0.0,
            DriverKind::Linear { alpha, beta, c } => alpha * y + beta * z + c,
            DriverKind::Custom(f) => f(t, x, y, z),
        }
    }

    /// Sampled check of `|f(θ) − f(θ')| ≤ L(|Δy| + |Δz|)` and `|f(·,0,0)| ≤ L`.
    pub fn probe(&self, horizon: f64, x_lo: f64, x_hi: f64) -> Result<()> {
        let l = self.lipschitz;
        let thetas: [(f64, f64); 5] = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (-0.5, 2.0), (3.0, -1.0)];
        for it in 0..3 {
            let t = horizon * it as f64 / 2.0;
            for ix in 0..5 {
                let x = x_lo + (x_hi - x_lo) * ix as f64 / 4.0;
                let f0 = self.eval(t, x, 0.0, 0.0);
                if f0.abs() > l + 1e-12 {
                    return Err(Error::DriverBounds(format!(
                        "|f(t,x,0,0)| = {} exceeds declared L = {l}",
                        f0.abs()
                    )));
                }
                for (y1, z1) in thetas {
                    for (y2, z2) in thetas {
                        let d = (self.eval(t, x, y1, z1) - self.eval(t, x, y2, z2)).abs();
                        let allowed = l * ((y1 - y2).abs() + (z1 - z2).abs()) + 1e-12;
                        if d > allowed {
                            return Err(Error::DriverBounds(format!(
                                "Lipschitz probe failed: |Δf| = {d} over |Δθ| allows {allowed}"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Closed-form value of the linear BSDE `Y' = -(α Y + c)` over a window of
/// length `delta` with terminal expectation `e_g` (supplied under the
/// β-shifted measure when β ≠ 0; for β = 0 it is the plain expectation):
///
/// ```text
/// Y = e^{αΔ} E[G] + c (e^{αΔ} − 1)/α,     → E[G] + cΔ as α → 0.
/// ```
pub fn linear_closed_form(alpha: f64, c: f64, e_g: f64, delta: f64) -> f64 {
    let growth = (alpha * delta).exp();
    if alpha.abs() < 1e-14 {
        e_g + c * delta
    } else {
        growth * e_g + c * (growth - 1.0) / alpha
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_examples() {
        assert_eq!(linear_closed_form(0.0, 0.0, 0.75, 1.0), 0.75);
        assert_eq!(linear_closed_form(0.0, 2.0, 0.0, 1.0), 2.0);
        let e = linear_closed_form(1.0, 0.0, 1.0, 1.0);
        assert!((e - std::f64::consts::E).abs() < 1e-14);
    }

    #[test]
    fn closed_form_continuous_at_alpha_zero() {
        let a = linear_closed_form(1e-15, 0.3, 0.5, 2.0);
        let b = linear_closed_form(0.0, 0.3, 0.5, 2.0);
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn probe_accepts_linear_and_rejects_undeclared_growth() {
        assert!(DriverSpec::linear(1.0, 0.5, 0.2).probe(1.0, -2.0, 2.0).is_ok());
        let lying = DriverSpec { kind: DriverKind::Linear { alpha: 3.0, beta: 0.0, c: 0.0 }, lipschitz: 1.0 };
        assert!(lying.probe(1.0, -2.0, 2.0).is_err());
        let unbounded_at_zero = DriverSpec::custom(|_, _, _, _| 5.0, 1.0);
        assert!(unbounded_at_zero.probe(1.0, -2.0, 2.0).is_err());
    }
}
