//! Evaluation metrics: per-sample relative L2 error and 95% predictive
//! coverage.

/// ‖prediction − truth‖₂ / ‖truth‖₂.
pub fn relative_l2(prediction: &[f64], truth: &[f64]) -> f64 {
    debug_assert_eq!(prediction.len(), truth.len());
    let mut num = 0.0;
    let mut den = 0.0;
    for (p, t) in prediction.iter().zip(truth) {
        num += (p - t) * (p - t);
        den += t * t;
    }
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (num / den).sqrt()
    }
}

/// Fraction of points where the truth lies inside mean ± 1.96·√variance.
pub fn coverage_95(mean: &[f64], variance: &[f64], truth: &[f64]) -> f64 {
    debug_assert_eq!(mean.len(), truth.len());
    debug_assert_eq!(variance.len(), truth.len());
    let mut hits = 0usize;
    for ((m, v), t) in mean.iter().zip(variance).zip(truth) {
        let half = 1.96 * v.max(0.0).sqrt();
        if *t >= m - half && *t <= m + half {
            hits += 1;
        }
    }
    hits as f64 / truth.len() as f64
}

/// Mean and population standard deviation of a slice.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var =
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn perfect_prediction_is_zero() {
        let t = [1.0, -2.0, 3.0];
        assert_eq!(relative_l2(&t, &t), 0.0);
    }

    #[test]
    fn zero_prediction_is_one() {
        let t = [1.0, -2.0, 3.0];
        let z = [0.0, 0.0, 0.0];
        assert!((relative_l2(&z, &t) - 1.0).abs() < 1e-15);
    }

    /// Gaussian residuals with known σ must land near 95% coverage.
    #[test]
    fn coverage_calibrated_on_synthetic_residuals() {
        let n = 10_000;
        let sigma = 0.7;
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mean = vec![0.0; n];
        let variance = vec![sigma * sigma; n];
        let truth: Vec<f64> =
            (0..n).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect();
        let c = coverage_95(&mean, &variance, &truth);
        assert!((c - 0.95).abs() < 0.02, "coverage {c}");
    }
}
