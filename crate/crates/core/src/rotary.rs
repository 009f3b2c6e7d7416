//! Rotary positional encoding driven by Poincaré-ball coordinates.
//!
//! Coordinates `(2t, 2t+1)` of a `D = 2d` vector form the `t`-th rotation
//! plane, rotated by angle `φ_t`. The block-diagonal matrix is never built.

use std::f64::consts::FRAC_PI_4;

use serde::{Deserialize, Serialize};

use crate::manifold::PoincarePoint;
use crate::numerics::{dot, DenseMatrix};

/// Scale from ball coordinates to angles.
pub const ANGLE_SCALE: f64 = FRAC_PI_4;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RotaryError {
    #[error("vector length {0} is odd; rotary vectors need D = 2d")]
    OddDimension(usize),
    #[error("length mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("encoding norm {0} is not inside the unit ball")]
    OutsideBall(f64),
    #[error("angle {0} outside [-pi/4, pi/4]")]
    AngleRange(f64),
    #[error("distance must be >= 0, got {0}")]
    NegativeDistance(f64),
    #[error("non-finite input")]
    NonFinite,
}

/// Per-feature rotation angles, one per plane, each in `[-π/4, π/4]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RotaryAngles(Vec<f64>);

impl RotaryAngles {
    pub fn new(angles: Vec<f64>) -> Result<Self, RotaryError> {
        for &a in &angles {
            if !a.is_finite() {
                return Err(RotaryError::NonFinite);
            }
            if a.abs() > FRAC_PI_4 * (1.0 + 1e-12) {
                return Err(RotaryError::AngleRange(a));
            }
        }
        Ok(Self(angles))
    }

    pub fn zeros(d: usize) -> Self {
        Self(vec![0.0; d])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Query and key projections, both `D x D`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionPair {
    pub w_q: DenseMatrix,
    pub w_k: DenseMatrix,
}

impl ProjectionPair {
    pub fn new(w_q: DenseMatrix, w_k: DenseMatrix) -> Result<Self, RotaryError> {
        let d = w_q.rows();
        if d % 2 != 0 {
            return Err(RotaryError::OddDimension(d));
        }
        for w in [&w_q, &w_k] {
            if w.rows() != d || w.cols() != d {
                return Err(RotaryError::Shape { expected: d, got: w.rows().max(w.cols()) });
            }
            if !w.is_finite() {
                return Err(RotaryError::NonFinite);
            }
        }
        Ok(Self { w_q, w_k })
    }

    pub fn identity(d: usize) -> Result<Self, RotaryError> {
        Self::new(DenseMatrix::identity(d), DenseMatrix::identity(d))
    }
}

/// `φ = (π/4)·e`.
pub fn angles_from_poincare(e: &PoincarePoint) -> Result<RotaryAngles, RotaryError> {
    angles_with_scale(e, ANGLE_SCALE)
}

/// `φ = c·e` for a scale `0 < c ≤ π/4`, which keeps every angle in range.
pub fn angles_with_scale(e: &PoincarePoint, c: f64) -> Result<RotaryAngles, RotaryError> {
    if !(c > 0.0 && c <= ANGLE_SCALE) {
        return Err(RotaryError::AngleRange(c));
    }
    let n = e.norm();
    if !(n < 1.0) {
        return Err(RotaryError::OutsideBall(n));
    }
    Ok(RotaryAngles(e.coords().iter().map(|&x| c * x).collect()))
}

fn check_pairs(angles: &[f64], len: usize) -> Result<(), RotaryError> {
    if len % 2 != 0 {
        return Err(RotaryError::OddDimension(len));
    }
    if angles.len() * 2 != len {
        return Err(RotaryError::Shape { expected: len / 2, got: angles.len() });
    }
    Ok(())
}

/// Applies the block rotation `R(φ)` to `x`. Accepts any angles (relative
/// differences may exceed the per-feature range).
pub fn rotate(angles: &[f64], x: &[f64]) -> Result<Vec<f64>, RotaryError> {
    check_pairs(angles, x.len())?;
    let mut out = vec![0.0; x.len()];
    for (t, &a) in angles.iter().enumerate() {
        let (s, c) = a.sin_cos();
        let (x1, x2) = (x[2 * t], x[2 * t + 1]);
        out[2 * t] = x1 * c - x2 * s;
        out[2 * t + 1] = x1 * s + x2 * c;
    }
    Ok(out)
}

fn inject(v: &[f64], phi: &RotaryAngles, w: &DenseMatrix) -> Result<Vec<f64>, RotaryError> {
    if w.cols() != v.len() || w.rows() != v.len() {
        return Err(RotaryError::Shape { expected: w.cols(), got: v.len() });
    }
    let projected = w.matvec(v).map_err(|_| RotaryError::Shape { expected: w.cols(), got: v.len() })?;
    rotate(phi.as_slice(), &projected)
}

/// `R(φ)·W_q·v`.
pub fn inject_query(v: &[f64], phi: &RotaryAngles, w_q: &DenseMatrix) -> Result<Vec<f64>, RotaryError> {
    inject(v, phi, w_q)
}

/// `R(φ)·W_k·v`.
pub fn inject_key(v: &[f64], phi: &RotaryAngles, w_k: &DenseMatrix) -> Result<Vec<f64>, RotaryError> {
    inject(v, phi, w_k)
}

fn relative(phi_m: &[f64], phi_n: &[f64]) -> Result<Vec<f64>, RotaryError> {
    if phi_m.len() != phi_n.len() {
        return Err(RotaryError::Shape { expected: phi_m.len(), got: phi_n.len() });
    }
    Ok(phi_n.iter().zip(phi_m).map(|(n, m)| n - m).collect())
}

/// Relative score `qᵀ R(φ_n − φ_m) k`, unscaled.
pub fn attention_score(q: &[f64], k: &[f64], phi_m: &RotaryAngles, phi_n: &RotaryAngles) -> Result<f64, RotaryError> {
    relative_score(q, k, &relative(phi_m.as_slice(), phi_n.as_slice())?)
}

/// `qᵀ R(Δ) k` for an arbitrary angle difference.
pub fn relative_score(q: &[f64], k: &[f64], delta: &[f64]) -> Result<f64, RotaryError> {
    if q.len() != k.len() {
        return Err(RotaryError::Shape { expected: q.len(), got: k.len() });
    }
    Ok(dot(q, &rotate(delta, k)?))
}

/// Per-plane `α_t = q₁k₁ + q₂k₂` and `β_t = q₂k₁ − q₁k₂`, so that the score
/// is `Σ α_t cos Δ_t + β_t sin Δ_t`.
pub fn plane_coefficients(q: &[f64], k: &[f64]) -> Result<(Vec<f64>, Vec<f64>), RotaryError> {
    if q.len() != k.len() {
        return Err(RotaryError::Shape { expected: q.len(), got: k.len() });
    }
    if q.len() % 2 != 0 {
        return Err(RotaryError::OddDimension(q.len()));
    }
    Ok(q.chunks_exact(2)
        .zip(k.chunks_exact(2))
        .map(|(q, k)| (q[0] * k[0] + q[1] * k[1], q[1] * k[0] - q[0] * k[1]))
        .unzip())
}

fn bound_from(alpha: &[f64], beta: &[f64], angle_term: f64) -> f64 {
    let d = alpha.len() as f64;
    let max_alpha = alpha.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    let sum_beta: f64 = beta.iter().map(|b| b.abs()).sum();
    d * max_alpha * angle_term.cos() + sum_beta
}

/// `(A⁻, A⁺)` with `A⁺ = d·max|α|·cos(‖φ_m − φ_n‖/d) + Σ|β|` and `A⁻ = −A⁺`.
pub fn score_bounds(q: &[f64], k: &[f64], phi_m: &RotaryAngles, phi_n: &RotaryAngles) -> Result<(f64, f64), RotaryError> {
    let (alpha, beta) = plane_coefficients(q, k)?;
    check_pairs(phi_m.as_slice(), q.len())?;
    let delta = relative(phi_m.as_slice(), phi_n.as_slice())?;
    let upper = upper_bound(&alpha, &beta, &delta);
    Ok((-upper, upper))
}

/// `A⁺` from precomputed plane coefficients and an angle difference.
pub fn upper_bound(alpha: &[f64], beta: &[f64], delta: &[f64]) -> f64 {
    let d = alpha.len().max(1) as f64;
    let norm = delta.iter().map(|x| x * x).sum::<f64>().sqrt();
    bound_from(alpha, beta, norm / d)
}

/// Limit of `A⁺` as one encoding collapses to the origin at fixed Poincaré
/// distance: `d·max|α|·cos((π/4d)·√(C/(C+1))) + Σ|β|`, `C = ½(cosh d_p − 1)`.
pub fn generality_limit(q: &[f64], k: &[f64], d_p: f64) -> Result<f64, RotaryError> {
    if d_p.is_nan() {
        return Err(RotaryError::NonFinite);
    }
    if d_p < 0.0 {
        return Err(RotaryError::NegativeDistance(d_p));
    }
    let (alpha, beta) = plane_coefficients(q, k)?;
    let d = alpha.len().max(1) as f64;
    // C/(C+1) = (cosh − 1)/(cosh + 1) = tanh²(d_p/2), stable for large d_p
    let ratio = (0.5 * d_p).tanh();
    Ok(bound_from(&alpha, &beta, FRAC_PI_4 / d * ratio))
}
