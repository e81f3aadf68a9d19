//! Muon update math: momentum accumulation, Newton-Schulz orthogonalization
//! and the parameter-application rule.
//!
//! All functions here are pure. The sharded steppers in [`crate::optim`] call
//! them on full matrices (orthogonalization) or on shard slices (momentum and
//! application are elementwise, so slicing commutes with them exactly).

use serde::{Deserialize, Serialize};

use super::matrix::{Matrix, Scalar};
use crate::error::{Error, Result};

/// Quintic Newton-Schulz coefficients `(a, b, c)` in common Muon use.
pub const DEFAULT_NS_COEFFICIENTS: (f64, f64, f64) = (3.4445, -4.7750, 2.0315);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MuonHyper {
    pub momentum_beta: f64,
    pub nesterov: bool,
    pub lr: f64,
    pub weight_decay: f64,
    pub ns_iterations: usize,
    pub ns_coefficients: (f64, f64, f64),
    /// Added to the Frobenius norm before pre-normalization.
    pub epsilon: f64,
}

impl Default for MuonHyper {
    fn default() -> Self {
        MuonHyper {
            momentum_beta: 0.95,
            nesterov: true,
            lr: 0.02,
            weight_decay: 0.0,
            ns_iterations: 5,
            ns_coefficients: DEFAULT_NS_COEFFICIENTS,
            epsilon: 1e-7,
        }
    }
}

impl MuonHyper {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("hyper.{msg}")));
        if !(0.0..1.0).contains(&self.momentum_beta) {
            return bad("momentum_beta must lie in [0, 1)");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be non-negative");
        }
        if self.ns_iterations == 0 {
            return bad("ns_iterations must be at least 1");
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return bad("epsilon must be positive");
        }
        let (a, b, c) = self.ns_coefficients;
        if !(a.is_finite() && b.is_finite() && c.is_finite()) {
            return bad("ns_coefficients must be finite");
        }
        Ok(())
    }
}

fn check_input<T: Scalar>(m: &Matrix<T>, what: &str) -> Result<()> {
    if m.rows() == 0 || m.cols() == 0 {
        return Err(Error::DegenerateShape {
            rows: m.rows(),
            cols: m.cols(),
        });
    }
    if !m.is_finite() {
        return Err(Error::NonFinite {
            context: what.to_string(),
        });
    }
    Ok(())
}

/// Approximate the polar factor `U Vᵀ` of `g`.
///
/// The iterate is kept wide (rows <= cols) so the Gram matrix `X Xᵀ` is the
/// small side.
pub fn newton_schulz<T: Scalar>(g: &Matrix<T>, hyper: &MuonHyper) -> Result<Matrix<T>> {
    check_input(g, "newton-schulz input")?;
    let (a, b, c) = hyper.ns_coefficients;
    let (a, b, c) = (T::from_f64(a), T::from_f64(b), T::from_f64(c));

    let norm = g.frobenius_norm() + T::from_f64(hyper.epsilon);
    let tall = g.rows() > g.cols();
    let mut x = if tall { g.transpose() } else { g.clone() };
    let inv = T::one() / norm;
    x.data_mut().iter_mut().for_each(|v| *v = *v * inv);

    for _ in 0..hyper.ns_iterations {
        let gram = x.gram();
        let gram_sq = gram.matmul(&gram)?;
        let poly = gram.zip_with(&gram_sq, |p, q| b * p + c * q)?;
        let px = poly.matmul(&x)?;
        x = x.zip_with(&px, |xv, pv| a * xv + pv)?;
    }

    let out = if tall { x.transpose() } else { x };
    if !out.is_finite() {
        return Err(Error::NonFinite {
            context: "newton-schulz output".to_string(),
        });
    }
    Ok(out)
}

/// Returns `(m', g_eff)` with `m' = beta m + g` and `g_eff` the Nesterov
/// look-ahead `g + beta m'` (or `m'` when Nesterov is off).
pub fn momentum_update<T: Scalar>(
    m: &Matrix<T>,
    g: &Matrix<T>,
    hyper: &MuonHyper,
) -> Result<(Matrix<T>, Matrix<T>)> {
    m.check_same_shape(g)?;
    let beta = T::from_f64(hyper.momentum_beta);
    let m_next = m.zip_with(g, |mv, gv| beta * mv + gv)?;
    let g_eff = if hyper.nesterov {
        g.zip_with(&m_next, |gv, mv| gv + beta * mv)?
    } else {
        m_next.clone()
    };
    Ok((m_next, g_eff))
}

/// Shape-dependent multiplier so update RMS stays comparable across shapes.
pub fn update_scale(full_rows: usize, full_cols: usize) -> f64 {
    (full_rows as f64 / full_cols as f64).max(1.0).sqrt()
}

/// `p (1 - lr wd) - lr scale u`. `p` and `u` may be shard slices; the scale
/// uses the full parameter dimensions.
pub fn apply_update<T: Scalar>(
    p: &Matrix<T>,
    u: &Matrix<T>,
    hyper: &MuonHyper,
    full_rows: usize,
    full_cols: usize,
) -> Result<Matrix<T>> {
    p.check_same_shape(u)?;
    let decay = T::from_f64(1.0 - hyper.lr * hyper.weight_decay);
    let step = T::from_f64(hyper.lr * update_scale(full_rows, full_cols));
    p.zip_with(u, |pv, uv| pv * decay - step * uv)
}
