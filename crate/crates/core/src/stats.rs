//! Small numeric helpers shared across the crate.
//!
//! Exponential-moment work is done in log domain throughout the crate; the
//! log-sum-exp helpers here are the single implementation everybody uses.
//! Likewise every dB/linear conversion goes through this module so the
//! convention (dBm = 10 log10 mW) lives in exactly one place.

/// log(sum(exp(v))) with max-shift, finite for any finite inputs.
///
/// Returns -inf for an empty slice (the empty sum).
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let sum: f64 = values.iter().map(|v| (v - m).exp()).sum();
    m + sum.ln()
}

/// log(mean(exp(v))).
pub fn log_mean_exp(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NEG_INFINITY;
    }
    log_sum_exp(values) - (values.len() as f64).ln()
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Unbiased sample variance (n-1 denominator); 0.0 for fewer than two samples.
pub fn variance(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64
}

/// dB value to linear power ratio.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Linear power ratio to dB.
pub fn linear_to_db(lin: f64) -> f64 {
    10.0 * lin.log10()
}

/// dBm to milliwatts. Same scale as `db_to_linear`, named for call-site clarity.
pub fn dbm_to_mw(dbm: f64) -> f64 {
    db_to_linear(dbm)
}

/// Lower edge of the Wilson score interval for a binomial proportion.
///
/// `z` is the normal quantile for the desired one-sided confidence
/// (2.576 for 99%). Well behaved at k = 0 and k = n, unlike the Wald interval.
pub fn wilson_lower(successes: u64, trials: u64, z: f64) -> f64 {
    if trials == 0 || successes == 0 {
        return 0.0;
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = p + z2 / (2.0 * n);
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((center - half) / denom).max(0.0)
}

/// Upper edge of the Wilson score interval.
pub fn wilson_upper(successes: u64, trials: u64, z: f64) -> f64 {
    if trials == 0 || successes == trials {
        return 1.0;
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = p + z2 / (2.0 * n);
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((center + half) / denom).min(1.0)
}

/// Empirical quantile by linear interpolation on the sorted copy.
/// `q` in [0, 1].
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-NaN samples"));
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let w = pos - lo as f64;
        sorted[lo] * (1.0 - w) + sorted[hi] * w
    }
}

/// Deviation check for a mean that should equal 1, done entirely in log
/// domain so it survives arguments like exp(800).
///
/// Input: log of each positive sample. Returns `(|mean - 1|, 3 * stderr)`
/// as a ratio pair `(dev / mean, 3 * stderr / mean)`; the unit-mean claim
/// holds when the first component is at most the second. Normalizing by the
/// mean keeps both sides representable.
pub fn unit_mean_deviation(log_samples: &[f64]) -> (f64, f64) {
    let n = log_samples.len() as f64;
    let lm = log_mean_exp(log_samples);
    // log E[v^2] for the variance; stays finite via max-shift.
    let doubled: Vec<f64> = log_samples.iter().map(|v| 2.0 * v).collect();
    let lm2 = log_mean_exp(&doubled);
    // Var[v] / mean^2 = exp(lm2 - 2 lm) - 1, the squared coefficient of variation.
    let cv2 = ((lm2 - 2.0 * lm).exp() - 1.0).max(0.0);
    let rel_stderr = (cv2 / n).sqrt();
    let rel_dev = (1.0 - (-lm).exp()).abs();
    (rel_dev, 3.0 * rel_stderr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn log_sum_exp_matches_naive_on_small_values() {
        let v = [0.1f64, -0.3, 1.2, 0.0];
        let naive: f64 = v.iter().map(|x| x.exp()).sum::<f64>().ln();
        assert_relative_eq!(log_sum_exp(&v), naive, max_relative = 1e-12);
    }

    #[test]
    fn log_sum_exp_survives_huge_exponents() {
        let v = [1000.0, 1000.0];
        assert_relative_eq!(log_sum_exp(&v), 1000.0 + 2f64.ln(), max_relative = 1e-12);
    }

    #[test]
    fn log_mean_exp_of_constant_is_constant() {
        let v = [3.5; 64];
        assert_relative_eq!(log_mean_exp(&v), 3.5, max_relative = 1e-12);
    }

    #[test]
    fn db_round_trip() {
        for &db in &[-174.0, -30.0, 0.0, 8.2, 46.0] {
            assert_relative_eq!(linear_to_db(db_to_linear(db)), db, epsilon = 1e-9);
        }
    }

    #[test]
    fn wilson_bounds_bracket_the_point_estimate() {
        let (k, n, z) = (7u64, 80_000u64, 2.576);
        let p = k as f64 / n as f64;
        assert!(wilson_lower(k, n, z) < p);
        assert!(wilson_upper(k, n, z) > p);
        assert_eq!(wilson_lower(0, 1000, z), 0.0);
        assert!(wilson_upper(0, 1000, z) > 0.0);
    }

    #[test]
    fn quantile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_relative_eq!(quantile(&v, 0.0), 1.0);
        assert_relative_eq!(quantile(&v, 1.0), 4.0);
        assert_relative_eq!(quantile(&v, 0.5), 2.5);
    }

    #[test]
    fn unit_mean_deviation_flags_a_shifted_mean() {
        // Samples exp(x) with mean e^0.5 != 1: deviation should exceed noise.
        let logs: Vec<f64> = (0..1000).map(|i| 0.5 + 0.001 * ((i % 7) as f64 - 3.0)).collect();
        let (dev, three_sigma) = unit_mean_deviation(&logs);
        assert!(dev > three_sigma);
        // Exactly unit mean: log samples of 0.
        let zeros = vec![0.0; 1000];
        let (dev, _) = unit_mean_deviation(&zeros);
        assert!(dev < 1e-12);
    }
}
