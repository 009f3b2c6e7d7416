//! Hyperboloid (Lorentz) and Poincaré-ball geometry of curvature −1.

use serde::{Deserialize, Serialize};

use crate::numerics::{dot, norm};

/// Deviation from `⟨p, p⟩_l = -1` tolerated on input, relative to `max(1, p0²)`
/// so that far-out points are not rejected for roundoff.
const ON_MANIFOLD_TOL: f64 = 1e-6;
const TANGENT_TOL: f64 = 1e-6;
const ZERO_TANGENT: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ManifoldError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("ambient dimension must be at least 2, got {0}")]
    TooSmall(usize),
    #[error("point is off the hyperboloid: <p,p> + 1 = {0:e}")]
    OffManifold(f64),
    #[error("vector is not tangent: <v,p> = {0:e}")]
    NotTangent(f64),
    #[error("point is not inside the unit ball: norm {0}")]
    OutsideBall(f64),
    #[error("non-finite input")]
    NonFinite,
}

/// `-p0 q0 + p̃ᵀq̃`.
pub fn minkowski_inner(p: &[f64], q: &[f64]) -> Result<f64, ManifoldError> {
    if p.len() != q.len() {
        return Err(ManifoldError::DimensionMismatch(p.len(), q.len()));
    }
    if p.len() < 2 {
        return Err(ManifoldError::TooSmall(p.len()));
    }
    Ok(minkowski_unchecked(p, q))
}

#[inline]
fn minkowski_unchecked(p: &[f64], q: &[f64]) -> f64 {
    -p[0] * q[0] + dot(&p[1..], &q[1..])
}

fn arcosh_clamped(x: f64) -> f64 {
    x.max(1.0).acosh()
}

/// `arcosh(1 + x)` without forming `1 + x`, accurate for small `x`.
fn arcosh_one_plus(x: f64) -> f64 {
    let x = x.max(0.0);
    (x + (x * (2.0 + x)).sqrt()).ln_1p()
}

/// Point on the upper sheet `⟨p, p⟩_l = -1`, `p0 > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HyperboloidPoint {
    coords: Vec<f64>,
}

impl HyperboloidPoint {
    /// Validates full ambient coordinates `(p0, p̃)`.
    pub fn new(coords: Vec<f64>) -> Result<Self, ManifoldError> {
        if coords.len() < 2 {
            return Err(ManifoldError::TooSmall(coords.len()));
        }
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(ManifoldError::NonFinite);
        }
        let dev = minkowski_unchecked(&coords, &coords) + 1.0;
        if coords[0] <= 0.0 || dev.abs() > ON_MANIFOLD_TOL * coords[0].powi(2).max(1.0) {
            return Err(ManifoldError::OffManifold(dev));
        }
        Ok(Self { coords })
    }

    /// The origin `p_o = (1, 0, …, 0)` of `H^d`.
    pub fn origin(d: usize) -> Self {
        let mut coords = vec![0.0; d + 1];
        coords[0] = 1.0;
        Self { coords }
    }

    /// Lifts spatial coordinates `p̃` onto the sheet.
    pub fn from_spatial(spatial: &[f64]) -> Result<Self, ManifoldError> {
        if spatial.is_empty() {
            return Err(ManifoldError::TooSmall(1));
        }
        if spatial.iter().any(|v| !v.is_finite()) {
            return Err(ManifoldError::NonFinite);
        }
        let mut coords = Vec::with_capacity(spatial.len() + 1);
        coords.push((1.0 + dot(spatial, spatial)).sqrt());
        coords.extend_from_slice(spatial);
        Ok(Self { coords })
    }

    /// Manifold dimension `d`.
    pub fn dim(&self) -> usize {
        self.coords.len() - 1
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn time(&self) -> f64 {
        self.coords[0]
    }

    pub fn spatial(&self) -> &[f64] {
        &self.coords[1..]
    }

    /// Distance to the origin, `arcosh(p0)`.
    pub fn specificity(&self) -> f64 {
        arcosh_clamped(self.coords[0])
    }

    /// Recomputes `p0` from `p̃`.
    fn renormalize(&mut self) {
        let s = dot(&self.coords[1..], &self.coords[1..]);
        self.coords[0] = (1.0 + s).sqrt();
    }
}

/// Point strictly inside the unit ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PoincarePoint {
    coords: Vec<f64>,
}

impl PoincarePoint {
    pub fn new(coords: Vec<f64>) -> Result<Self, ManifoldError> {
        if coords.is_empty() {
            return Err(ManifoldError::TooSmall(0));
        }
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(ManifoldError::NonFinite);
        }
        let n = norm(&coords);
        if n >= 1.0 {
            return Err(ManifoldError::OutsideBall(n));
        }
        Ok(Self { coords })
    }

    pub fn origin(d: usize) -> Self {
        Self { coords: vec![0.0; d] }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn norm(&self) -> f64 {
        norm(&self.coords)
    }
}

/// `d_l(p, q) = arcosh(-⟨p, q⟩_l)`.
///
/// Nearby points go through `-⟨p, q⟩_l - 1 = ⟨p - q, p - q⟩_l / 2`, which
/// avoids cancelling against 1.
pub fn dist_hyperboloid(p: &HyperboloidPoint, q: &HyperboloidPoint) -> Result<f64, ManifoldError> {
    let ip = minkowski_inner(&p.coords, &q.coords)?;
    if -ip > 2.0 {
        return Ok(arcosh_clamped(-ip));
    }
    let diff: Vec<f64> = p.coords.iter().zip(&q.coords).map(|(a, b)| a - b).collect();
    Ok(arcosh_one_plus(0.5 * minkowski_unchecked(&diff, &diff)))
}

/// `u + ⟨p, u⟩_l p`, the orthogonal projection onto `T_p H^d`.
pub fn project_tangent(p: &HyperboloidPoint, u: &[f64]) -> Result<Vec<f64>, ManifoldError> {
    let ip = minkowski_inner(&p.coords, u)?;
    Ok(u.iter().zip(&p.coords).map(|(ui, pi)| ui + ip * pi).collect())
}

/// Minkowski norm of a tangent (space-like) vector.
fn tangent_norm(v: &[f64]) -> f64 {
    minkowski_unchecked(v, v).max(0.0).sqrt()
}

/// `exp_p(v) = cosh(‖v‖_l) p + sinh(‖v‖_l) v / ‖v‖_l`.
pub fn exp_map(p: &HyperboloidPoint, v: &[f64]) -> Result<HyperboloidPoint, ManifoldError> {
    let ip = minkowski_inner(&p.coords, v)?;
    if v.iter().any(|x| !x.is_finite()) {
        return Err(ManifoldError::NonFinite);
    }
    let scale = p.coords[0] * norm(v);
    if ip.abs() > TANGENT_TOL * scale.max(1.0) {
        return Err(ManifoldError::NotTangent(ip));
    }
    exp_map_unchecked(p, v)
}

fn exp_map_unchecked(p: &HyperboloidPoint, v: &[f64]) -> Result<HyperboloidPoint, ManifoldError> {
    let n = tangent_norm(v);
    if n < ZERO_TANGENT {
        return Ok(p.clone());
    }
    let (c, s) = (n.cosh(), n.sinh() / n);
    let coords: Vec<f64> = p.coords.iter().zip(v).map(|(pi, vi)| c * pi + s * vi).collect();
    if coords.iter().any(|x| !x.is_finite()) {
        return Err(ManifoldError::NonFinite);
    }
    let mut out = HyperboloidPoint { coords };
    out.renormalize();
    Ok(out)
}

/// Applies the inverse metric `diag(-1, 1, …, 1)`.
pub fn euclid_to_riemannian_grad(g: &[f64]) -> Result<Vec<f64>, ManifoldError> {
    if g.iter().any(|x| !x.is_finite()) {
        return Err(ManifoldError::NonFinite);
    }
    let mut out = g.to_vec();
    if let Some(first) = out.first_mut() {
        *first = -*first;
    }
    Ok(out)
}

/// One Riemannian SGD step: convert, project, move along `-η` times the
/// tangent gradient with the exponential map, then restore `p0`.
pub fn rsgd_step(p: &HyperboloidPoint, euclid_grad: &[f64], eta: f64) -> Result<HyperboloidPoint, ManifoldError> {
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(ManifoldError::NonFinite);
    }
    if euclid_grad.len() != p.coords.len() {
        return Err(ManifoldError::DimensionMismatch(euclid_grad.len(), p.coords.len()));
    }
    let h = project_tangent(p, &euclid_to_riemannian_grad(euclid_grad)?)?;
    let v: Vec<f64> = h.iter().map(|x| -eta * x).collect();
    exp_map_unchecked(p, &v)
}

/// `f_d(p) = p̃ / (p0 + 1)`.
pub fn to_poincare(p: &HyperboloidPoint) -> PoincarePoint {
    let denom = p.coords[0] + 1.0;
    PoincarePoint {
        coords: p.coords[1..].iter().map(|x| x / denom).collect(),
    }
}

/// `f_d⁻¹(e) = (1 + ‖e‖², 2e) / (1 - ‖e‖²)`.
pub fn from_poincare(e: &PoincarePoint) -> Result<HyperboloidPoint, ManifoldError> {
    let sq = dot(&e.coords, &e.coords);
    if sq >= 1.0 {
        return Err(ManifoldError::OutsideBall(sq.sqrt()));
    }
    let denom = 1.0 - sq;
    let mut coords = Vec::with_capacity(e.coords.len() + 1);
    coords.push((1.0 + sq) / denom);
    coords.extend(e.coords.iter().map(|x| 2.0 * x / denom));
    Ok(HyperboloidPoint { coords })
}

/// `arcosh(1 + 2‖e₁ - e₂‖² / ((1 - ‖e₁‖²)(1 - ‖e₂‖²)))`.
pub fn dist_poincare(a: &PoincarePoint, b: &PoincarePoint) -> Result<f64, ManifoldError> {
    if a.coords.len() != b.coords.len() {
        return Err(ManifoldError::DimensionMismatch(a.coords.len(), b.coords.len()));
    }
    let (na, nb) = (dot(&a.coords, &a.coords), dot(&b.coords, &b.coords));
    if na >= 1.0 || nb >= 1.0 {
        return Err(ManifoldError::OutsideBall(na.max(nb).sqrt()));
    }
    let diff: f64 = a.coords.iter().zip(&b.coords).map(|(x, y)| (x - y).powi(2)).sum();
    Ok(arcosh_one_plus(2.0 * diff / ((1.0 - na) * (1.0 - nb))))
}
