//! Direct circular convolution, the time-domain reference the spectral layer
//! is checked against.

use crate::error::{Error, Result};

/// y[t] = Σ_τ h[τ]·x[(t−τ) mod n], evaluated as the direct sum.
pub fn circular_convolve(x: &[f64], h: &[f64]) -> Result<Vec<f64>> {
    let n = x.len();
    if h.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: h.len(), context: "circular_convolve" });
    }
    let mut y = vec![0.0; n];
    for (t, out) in y.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (tau, &hv) in h.iter().enumerate() {
            acc += hv * x[(t + n - tau) % n];
        }
        *out = acc;
    }
    Ok(y)
}
