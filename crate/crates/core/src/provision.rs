//! Minimum service rate for a (wb, ε) delay target.
//!
//! Inverts the delay bound: a concatenated multi-hop queue cleared at rate
//! C = ΣQ_i(t)/wb meets P{W ≥ wb} ≤ ε when
//!
//!   C = (1/(θ·wb))·ln(ε / E[e^{θ·X_msb}])
//!
//! The raw formula value is negative for stringent targets (ε below the
//! moment), so the magnitude is the rate actually reported; when the target
//! is already met at zero extra backlog clearance, C floors at the mean
//! arrival rate. The branch taken is always recorded.

use crate::bounds::XmsbEstimate;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QosTarget {
    /// Delay target in slots.
    pub wb: usize,
    /// Violation probability target.
    pub epsilon: f64,
}

impl QosTarget {
    pub fn new(wb: usize, epsilon: f64) -> Result<Self> {
        if wb == 0 {
            return Err(Error::Config("QoS delay target must be at least 1 slot".into()));
        }
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::Config(format!(
                "QoS violation probability must lie in (0, 1), got {epsilon}"
            )));
        }
        Ok(QosTarget { wb, epsilon })
    }
}

/// Which arm of the rate formula produced the answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateBranch {
    /// Magnitude of the (negative) raw formula value.
    FormulaMagnitude,
    /// Raw value was nonnegative or below the mean arrival rate; the rate
    /// floors there because service below the arrival rate cannot be a
    /// minimum for any target.
    FlooredAtArrivalRate,
}

#[derive(Debug, Clone, Copy)]
pub struct ProvisionResult {
    pub c_bits_per_slot: f64,
    pub theta: f64,
    /// ΣQ_i(t) the concatenation argument assigns to the tandem: C·wb.
    pub implied_backlog: f64,
    pub mean_arrival_rate: f64,
    /// Formula value before branch handling (sign preserved).
    pub raw_c: f64,
    pub branch: RateBranch,
}

/// Minimum per-slot service rate meeting `target` at decay θ, given the
/// window-moment estimate for the same θ and wb.
pub fn minimum_service_rate(
    xmsb: &XmsbEstimate,
    target: &QosTarget,
    theta: f64,
    mean_arrival_rate: f64,
) -> Result<ProvisionResult> {
    if !(theta > 0.0) {
        return Err(Error::Config(format!("decay parameter must be positive, got {theta}")));
    }
    if !(target.epsilon > 0.0 && target.epsilon < 1.0) {
        return Err(Error::Config(format!(
            "QoS violation probability must lie in (0, 1), got {}",
            target.epsilon
        )));
    }
    let rel = (xmsb.theta - theta).abs() / theta.max(f64::MIN_POSITIVE);
    if rel > 1e-9 {
        return Err(Error::Config(format!(
            "window moment was estimated at theta {} but provisioning asked for {theta}",
            xmsb.theta
        )));
    }
    if !(mean_arrival_rate >= 0.0) {
        return Err(Error::Config(format!(
            "mean arrival rate must be nonnegative, got {mean_arrival_rate}"
        )));
    }
    let raw_c = (target.epsilon.ln() - xmsb.log_moment) / (theta * target.wb as f64);
    let (c, branch) = if raw_c < 0.0 && -raw_c > mean_arrival_rate {
        (-raw_c, RateBranch::FormulaMagnitude)
    } else {
        (mean_arrival_rate, RateBranch::FlooredAtArrivalRate)
    };
    Ok(ProvisionResult {
        c_bits_per_slot: c,
        theta,
        implied_backlog: c * target.wb as f64,
        mean_arrival_rate,
        raw_c,
        branch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn xmsb_at(theta: f64, log_moment: f64) -> XmsbEstimate {
        XmsbEstimate {
            theta,
            log_moment,
            mean_xmsb: -10.0,
            sample_count: 1000,
        }
    }

    #[test]
    fn stringent_target_rate_by_hand() {
        // θ = 1e-3, wb = 20, ln E[e^{θX}] = −2, ε = 1e-5:
        // raw = (ln(1e-5) + 2)/0.02 = −475.6462732485…, reported as magnitude.
        let xmsb = xmsb_at(1e-3, -2.0);
        let target = QosTarget::new(20, 1e-5).unwrap();
        let r = minimum_service_rate(&xmsb, &target, 1e-3, 100.0).unwrap();
        assert_eq!(r.branch, RateBranch::FormulaMagnitude);
        assert_relative_eq!(r.raw_c, -475.64627324851148, max_relative = 1e-12);
        assert_relative_eq!(r.c_bits_per_slot, 475.64627324851148, max_relative = 1e-12);
        assert_relative_eq!(
            r.implied_backlog,
            r.c_bits_per_slot * 20.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn target_equal_to_moment_floors_at_arrival_rate() {
        let eps: f64 = 1e-4;
        let xmsb = xmsb_at(5e-4, eps.ln());
        let target = QosTarget::new(10, eps).unwrap();
        let r = minimum_service_rate(&xmsb, &target, 5e-4, 820.0).unwrap();
        assert_eq!(r.raw_c, 0.0);
        assert_eq!(r.branch, RateBranch::FlooredAtArrivalRate);
        assert_eq!(r.c_bits_per_slot, 820.0);
    }

    #[test]
    fn magnitude_below_arrival_rate_floors_too() {
        // |raw| = 47.56 < mean rate 100: the floor wins and is flagged.
        let xmsb = xmsb_at(1e-2, -2.0);
        let target = QosTarget::new(20, 1e-5).unwrap();
        let r = minimum_service_rate(&xmsb, &target, 1e-2, 100.0).unwrap();
        assert_eq!(r.branch, RateBranch::FlooredAtArrivalRate);
        assert_eq!(r.c_bits_per_slot, 100.0);
        assert!(r.raw_c < 0.0 && -r.raw_c < 100.0);
    }

    #[test]
    fn rate_never_increases_as_epsilon_loosens() {
        let theta = 2e-3;
        let xmsb = xmsb_at(theta, -1.0);
        let mut last = f64::INFINITY;
        for eps in [1e-9, 1e-7, 1e-5, 1e-3, 1e-1, 0.9] {
            let target = QosTarget::new(15, eps).unwrap();
            let r = minimum_service_rate(&xmsb, &target, theta, 50.0).unwrap();
            assert!(
                r.c_bits_per_slot <= last,
                "eps {eps}: rate {} above previous {last}",
                r.c_bits_per_slot
            );
            last = r.c_bits_per_slot;
        }
    }

    #[test]
    fn longer_window_needs_no_more_rate_at_fixed_moment() {
        let theta = 1e-3;
        let xmsb = xmsb_at(theta, -2.0);
        let eps = 1e-5;
        let short = minimum_service_rate(&xmsb, &QosTarget::new(10, eps).unwrap(), theta, 10.0)
            .unwrap();
        let long = minimum_service_rate(&xmsb, &QosTarget::new(20, eps).unwrap(), theta, 10.0)
            .unwrap();
        assert!(long.c_bits_per_slot <= short.c_bits_per_slot);
    }

    #[test]
    fn rate_never_drops_below_arrival_rate() {
        let theta = 1e-3;
        for lm in [-8.0, -2.0, -0.5, -0.01] {
            for eps in [1e-8, 1e-4, 1e-2, 0.5] {
                for rate in [0.0, 55.0, 4000.0] {
                    let xmsb = xmsb_at(theta, lm);
                    let target = QosTarget::new(12, eps).unwrap();
                    let r = minimum_service_rate(&xmsb, &target, theta, rate).unwrap();
                    assert!(r.c_bits_per_slot >= rate);
                    assert_relative_eq!(
                        r.implied_backlog,
                        r.c_bits_per_slot * 12.0,
                        max_relative = 1e-12
                    );
                }
            }
        }
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let xmsb = xmsb_at(1e-3, -2.0);
        let target = QosTarget::new(10, 1e-5).unwrap();
        assert!(minimum_service_rate(&xmsb, &target, 0.0, 10.0).is_err());
        assert!(minimum_service_rate(&xmsb, &target, -1.0, 10.0).is_err());
        assert!(minimum_service_rate(&xmsb, &target, 2e-3, 10.0).is_err());
        assert!(QosTarget::new(0, 1e-5).is_err());
        assert!(QosTarget::new(10, 0.0).is_err());
        assert!(QosTarget::new(10, 1.0).is_err());
    }
}
