//! Gauss–Hermite quadrature in probabilists' normalization:
//! `E[f(Z)] ≈ Σ w_k f(ξ_k)` for `Z ~ N(0,1)`.
//!
//! Nodes and weights come from the Golub–Welsch eigenvalue construction on
//! the Jacobi matrix of the (monic) Hermite recurrence. The rule is then
//! symmetrized pairwise so that `Σ w_k = 1` and `Σ w_k ξ_k = 0` hold exactly,
//! which keeps the backward lattice sweep an exact martingale on linear data.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, SymmetricEigen};

#[derive(Debug, Clone)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(order: usize) -> Result<Self> {
        if order < 2 || order > 128 {
            return Err(Error::InvalidInput(format!(
                "Gauss-Hermite order {order} outside supported range 2..=128"
            )));
        }
        // Jacobi matrix for monic probabilists' Hermite: zero diagonal,
        // off-diagonal sqrt(k).
        let mut jac = DMatrix::<f64>::zeros(order, order);
        for k in 1..order {
            let b = (k as f64).sqrt();
            jac[(k - 1, k)] = b;
            jac[(k, k - 1)] = b;
        }
        let eig = SymmetricEigen::new(jac);
        let mut pairs: Vec<(f64, f64)> = (0..order)
            .map(|i| {
                let node = eig.eigenvalues[i];
                let w = eig.eigenvectors[(0, i)].powi(2);
                (node, w)
            })
            .collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

        let mut nodes: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let mut weights: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        // Pairwise symmetrization; the middle node of an odd rule is pinned to 0.
        let n = order;
        for i in 0..n / 2 {
            let j = n - 1 - i;
            let x = 0.5 * (nodes[j] - nodes[i]);
            nodes[i] = -x;
            nodes[j] = x;
            let w = 0.5 * (weights[i] + weights[j]);
            weights[i] = w;
            weights[j] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        Ok(Self { nodes, weights })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Standard-normal abscissae ξ_k.
    #[inline]
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    #[inline]
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `E[f(Z)]` under the rule.
    pub fn expect(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    /// Largest abscissa (used for step-size safety margins).
    pub fn max_node(&self) -> f64 {
        self.nodes.last().copied().unwrap_or(0.0).abs()
    }
}
