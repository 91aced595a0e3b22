use super::AllocationDistribution;
use crate::error::AnalyticError;

/// Logarithmic social welfare `Σ_i v_i q_i ln x_i`.
///
/// Negative infinity when some ad with positive weight gets zero probability.
/// Terms with zero weight contribute nothing, whatever their probability.
pub fn log_lsw(x: &[f64], q: &[f64], v: &[f64]) -> f64 {
    x.iter()
        .zip(q)
        .zip(v)
        .map(|((&x, &q), &v)| {
            let w = v * q;
            if w == 0.0 {
                0.0
            } else if x <= 0.0 {
                f64::NEG_INFINITY
            } else {
                w * x.ln()
            }
        })
        .sum()
}

/// `Π_i x_i^{v_i q_i}`.
pub fn lsw(x: &[f64], q: &[f64], v: &[f64]) -> f64 {
    log_lsw(x, q, v).exp()
}

/// The allocation maximizing logarithmic social welfare: `x_i ∝ q_i v_i`.
pub fn lsw_maximizer(q: &[f64], v: &[f64]) -> Result<AllocationDistribution, AnalyticError> {
    if q.len() != v.len() {
        return Err(AnalyticError::LengthMismatch);
    }
    AllocationDistribution::from_weights(q.iter().zip(v).map(|(q, v)| q * v).collect())
}
