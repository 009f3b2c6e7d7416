use super::NumericsError;

/// Compares an analytic gradient against central finite differences.
///
/// Returns `max_i |gᵢ − ĝᵢ| / (|gᵢ| + 1e-12)` where `ĝ` is the central
/// difference estimate with step `eps`.
pub fn fd_gradient_check<F>(f: F, analytic: &[f64], x: &[f64], eps: f64) -> Result<f64, NumericsError>
where
    F: Fn(&[f64]) -> f64,
{
    if analytic.len() != x.len() {
        return Err(NumericsError::Shape(format!(
            "gradient has {} components, point has {}",
            analytic.len(),
            x.len()
        )));
    }
    if !(eps > 0.0) {
        return Err(NumericsError::InvalidArgument(format!("step must be positive, got {eps}")));
    }
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        let up = f(&probe);
        probe[i] = x[i] - eps;
        let down = f(&probe);
        probe[i] = x[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(NumericsError::NonFinite(format!("objective at perturbed component {i}")));
        }
        let numeric = (up - down) / (2.0 * eps);
        let rel = (analytic[i] - numeric).abs() / (analytic[i].abs() + 1e-12);
        worst = worst.max(rel);
    }
    Ok(worst)
}
