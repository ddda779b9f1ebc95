//! Entropy and relative entropy of nonnegative matrices, in nats.

use crate::matrix::{Dense, NonnegMatrix};

/// Shannon entropy `-sum P_ij ln P_ij` with the convention `0 ln 0 = 0`.
pub fn entropy(p: &NonnegMatrix) -> f64 {
    p.as_slice()
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| -v * v.ln())
        .sum()
}

/// Relative entropy `sum P_ij ln(P_ij / M_ij)` with `0 ln 0 = 0`.
///
/// Returns `+inf` when P puts mass where M vanishes. Nonnegativity is only
/// guaranteed when both arguments carry equal total mass; the Sinkhorn limit
/// minimizes this quantity over all plans with the prescribed marginals.
pub fn kl_divergence(p: &NonnegMatrix, m: &NonnegMatrix) -> f64 {
    assert!(
        p.same_shape(m),
        "kl_divergence: shape mismatch {}x{} vs {}x{}",
        p.rows(),
        p.cols(),
        m.rows(),
        m.cols()
    );
    let mut sum = 0.0;
    for (&pv, &mv) in p.as_slice().iter().zip(m.as_slice()) {
        if pv > 0.0 {
            if mv == 0.0 {
                return f64::INFINITY;
            }
            sum += pv * (pv / mv).ln();
        }
    }
    sum
}
