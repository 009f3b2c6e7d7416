//! Matrix exponential by scaling and squaring around a degree-8 Taylor core.

use super::{DenseMatrix, NumericsError};

/// Degree of the truncated Taylor polynomial.
const TAYLOR_DEGREE: usize = 8;

/// The scaled matrix is brought below this infinity norm before the Taylor
/// core is evaluated. At 1/8 the truncation remainder of the degree-8 series
/// is about 2e-14 relative.
const SCALED_NORM_TARGET: f64 = 0.125;

/// Computes `e^S` for a square matrix.
pub fn mat_exp(s: &DenseMatrix) -> Result<DenseMatrix, NumericsError> {
    if !s.is_square() {
        return Err(NumericsError::NotSquare(s.rows(), s.cols()));
    }
    if !s.is_finite() {
        return Err(NumericsError::NonFinite("matrix exponential input".into()));
    }
    let n = s.rows();
    if n == 0 {
        return Ok(DenseMatrix::zeros(0, 0));
    }

    let norm = s.norm_inf();
    let squarings = if norm > SCALED_NORM_TARGET {
        (norm / SCALED_NORM_TARGET).log2().ceil() as i32
    } else {
        0
    };
    let scaled = s.scale(2f64.powi(-squarings));

    // Horner form: I + X(I + X/2(I + X/3(...)))
    let ident = DenseMatrix::identity(n);
    let mut acc = ident.clone();
    for k in (1..=TAYLOR_DEGREE).rev() {
        let mut next = scaled.matmul_unchecked(&acc).scale(1.0 / k as f64);
        next.add_assign_scaled(&ident, 1.0);
        acc = next;
    }
    for _ in 0..squarings {
        acc = acc.matmul_unchecked(&acc);
    }
    if !acc.is_finite() {
        return Err(NumericsError::NonFinite("matrix exponential overflowed".into()));
    }
    Ok(acc)
}
