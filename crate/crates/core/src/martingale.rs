//! Exponential martingales built from process traces.
//!
//! For a cumulative process X with window length wb, the rate function
//!
//!   D_X(θ) = (1/θ) ln E[exp(θ (X(t+wb) − X(t)) / wb)]
//!
//! is estimated as the empirical log-MGF of window-averaged increments over
//! all sliding windows. The block value at slot t is
//! exp(θ (X(t+wb) − X(t) − wb D_X(θ))); the one-step factor
//! exp(θ (x̄(t) − D_X(θ))) built from the window average x̄ has unit mean by
//! construction. The backlog variant applies the wb = 1 construction to the
//! per-slot backlog increments q(t) restricted to busy slots, where they are
//! independent and stationary.

use crate::stats::log_mean_exp;
use crate::tandem::QueueTrace;
use crate::{Error, Result};
use std::io::Write;

/// Deterministic rate D_X(θ) of a process, bits/slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFunction {
    pub theta: f64,
    pub value: f64,
    pub window_wb: usize,
    pub sample_count: usize,
}

/// Window-averaged increments of a cumulative process: the sufficient
/// statistic for estimating D_X(θ) at any θ. Averages may be pooled across
/// realizations of the same process.
#[derive(Debug, Clone)]
pub struct WindowSamples {
    pub window_wb: usize,
    pub averages: Vec<f64>,
}

fn check_theta(theta: f64) -> Result<()> {
    if !(theta > 0.0) || !theta.is_finite() {
        return Err(Error::Config(format!(
            "theta must be positive and finite, got {theta}"
        )));
    }
    Ok(())
}

impl WindowSamples {
    /// All sliding windows of length `wb` over per-slot increments.
    pub fn from_increments(increments: &[f64], wb: usize) -> Result<Self> {
        if wb == 0 {
            return Err(Error::Config("window length must be at least 1".into()));
        }
        if increments.len() < wb + 1 {
            return Err(Error::InsufficientSamples {
                needed: wb + 1,
                got: increments.len(),
            });
        }
        let mut averages = Vec::with_capacity(increments.len() - wb + 1);
        let mut sum: f64 = increments[..wb].iter().sum();
        averages.push(sum / wb as f64);
        for t in wb..increments.len() {
            sum += increments[t] - increments[t - wb];
            averages.push(sum / wb as f64);
        }
        Ok(WindowSamples {
            window_wb: wb,
            averages,
        })
    }

    /// Windows over a cumulative sequence X(0..=n).
    pub fn from_cumulative(cumulative: &[f64], wb: usize) -> Result<Self> {
        if wb == 0 {
            return Err(Error::Config("window length must be at least 1".into()));
        }
        if cumulative.len() < wb + 2 {
            return Err(Error::InsufficientSamples {
                needed: wb + 2,
                got: cumulative.len(),
            });
        }
        let averages = (0..cumulative.len() - wb)
            .map(|t| (cumulative[t + wb] - cumulative[t]) / wb as f64)
            .collect();
        Ok(WindowSamples {
            window_wb: wb,
            averages,
        })
    }

    pub fn rate(&self, theta: f64) -> Result<RateFunction> {
        check_theta(theta)?;
        if self.averages.is_empty() {
            return Err(Error::EmptyInput("window averages"));
        }
        let exponents: Vec<f64> = self.averages.iter().map(|&x| theta * x).collect();
        let value = log_mean_exp(&exponents) / theta;
        Ok(RateFunction {
            theta,
            value,
            window_wb: self.window_wb,
            sample_count: self.averages.len(),
        })
    }
}

/// D_X(θ) from per-slot increments of one realization.
pub fn estimate_rate(increments: &[f64], theta: f64, wb: usize) -> Result<RateFunction> {
    WindowSamples::from_increments(increments, wb)?.rate(theta)
}

/// A process together with a fitted rate, exposing martingale values.
#[derive(Debug, Clone)]
pub struct MartingaleView {
    /// Cumulative process X(t), index t, X(0) first.
    pub process: Vec<f64>,
    pub theta: f64,
    pub window_wb: usize,
    pub rate: RateFunction,
}

impl MartingaleView {
    /// Largest t for which a block value exists.
    pub fn last_slot(&self) -> usize {
        self.process.len() - 1 - self.window_wb
    }

    /// ln of the block value at slot t: θ (X(t+wb) − X(t) − wb D).
    pub fn log_value_at(&self, t: usize) -> Result<f64> {
        if t + self.window_wb >= self.process.len() {
            return Err(Error::SlotOutOfRange {
                slot: t + self.window_wb,
                horizon: self.process.len() - 1,
            });
        }
        let delta = self.process[t + self.window_wb] - self.process[t];
        Ok(self.theta * (delta - self.window_wb as f64 * self.rate.value))
    }

    pub fn value_at(&self, t: usize) -> Result<f64> {
        Ok(self.log_value_at(t)?.exp())
    }

    /// ln of the one-step factor at slot t: θ (x̄(t) − D) where x̄ is the
    /// window average. Its exponential has unit mean by construction.
    pub fn log_step_factor_at(&self, t: usize) -> Result<f64> {
        Ok(self.log_value_at(t)? / self.window_wb as f64
            - self.theta * self.rate.value * (1.0 - 1.0 / self.window_wb as f64))
    }

    /// ln of the prefix-product martingale at slot t: θ (X(t) − X(0) − t D).
    /// For wb = 1 this is the product of the one-step factors up to t.
    pub fn log_prefix_at(&self, t: usize) -> Result<f64> {
        if t >= self.process.len() {
            return Err(Error::SlotOutOfRange {
                slot: t,
                horizon: self.process.len() - 1,
            });
        }
        let delta = self.process[t] - self.process[0];
        Ok(self.theta * (delta - t as f64 * self.rate.value))
    }

    /// Dumps (t, M_SB(t)) rows as CSV for debugging.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,m_sb")?;
        for t in 0..=self.last_slot() {
            writeln!(out, "{},{}", t, self.value_at(t)?)?;
        }
        Ok(())
    }
}

/// Sliding block martingale over a cumulative sequence X(0..=n).
pub fn sliding_block_martingale(
    cumulative: &[f64],
    theta: f64,
    wb: usize,
) -> Result<MartingaleView> {
    check_theta(theta)?;
    let samples = WindowSamples::from_cumulative(cumulative, wb)?;
    let rate = samples.rate(theta)?;
    Ok(MartingaleView {
        process: cumulative.to_vec(),
        theta,
        window_wb: wb,
        rate,
    })
}

/// Per-slot backlog increments q(t) over busy slots (Q(t) > 0), in slot
/// order across all busy periods. Errors unless some busy period spans at
/// least two slots.
pub fn busy_increments(trace: &QueueTrace) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    let mut run = 0usize;
    let mut longest = 0usize;
    for t in 1..trace.backlog.len() {
        if trace.backlog[t] > 0 {
            out.push(trace.increments[t - 1] as f64);
            run += 1;
            longest = longest.max(run);
        } else {
            run = 0;
        }
    }
    if longest < 2 {
        return Err(Error::NoBusyPeriod);
    }
    Ok(out)
}

/// Backlog martingale: the wb = 1 construction over the concatenated
/// busy-period increments of a queue.
pub fn backlog_martingale(trace: &QueueTrace, theta: f64) -> Result<MartingaleView> {
    check_theta(theta)?;
    let increments = busy_increments(trace)?;
    let mut process = Vec::with_capacity(increments.len() + 1);
    let mut acc = 0.0;
    process.push(acc);
    for &q in &increments {
        acc += q;
        process.push(acc);
    }
    let rate = estimate_rate(&increments, theta, 1)?;
    Ok(MartingaleView {
        process,
        theta,
        window_wb: 1,
        rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::unit_mean_deviation;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_process_rate_is_the_constant() {
        let incs = vec![3.25; 50];
        for theta in [1e-4, 0.1, 2.0] {
            for wb in [1, 4, 9] {
                let r = estimate_rate(&incs, theta, wb).unwrap();
                assert_relative_eq!(r.value, 3.25, max_relative = 1e-12);
                assert_eq!(r.sample_count, 50 - wb + 1);
            }
        }
    }

    #[test]
    fn small_theta_rate_approaches_sample_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let incs: Vec<f64> = (0..4000).map(|_| rng.gen_range(0.0..5.0)).collect();
        let mean = incs.iter().sum::<f64>() / incs.len() as f64;
        let r = estimate_rate(&incs, 1e-6, 1).unwrap();
        assert_relative_eq!(r.value, mean, max_relative = 1e-3);
    }

    #[test]
    fn two_point_rate_matches_closed_form() {
        // x ∈ {0, 2} equiprobable, wb = 1, θ = 1: D = ln((1 + e^2)/2).
        let incs: Vec<f64> = (0..10_000).map(|i| if i % 2 == 0 { 0.0 } else { 2.0 }).collect();
        let r = estimate_rate(&incs, 1.0, 1).unwrap();
        let expected = ((1.0 + 2.0f64.exp()) / 2.0).ln();
        assert_abs_diff_eq!(expected, 1.4338, epsilon = 1e-4);
        assert_relative_eq!(r.value, expected, max_relative = 1e-9);
    }

    #[test]
    fn rate_dominates_mean_and_drops_to_it_at_tiny_theta() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let incs: Vec<f64> = (0..5000).map(|_| rng.gen_range(-2.0..4.0)).collect();
        let mean = incs.iter().sum::<f64>() / incs.len() as f64;
        for theta in [0.01, 0.1, 1.0] {
            let r = estimate_rate(&incs, theta, 1).unwrap();
            assert!(r.value >= mean - 1e-12, "theta {theta}: {} < {mean}", r.value);
        }
    }

    #[test]
    fn short_sequence_and_bad_theta_are_rejected() {
        assert!(matches!(
            estimate_rate(&[1.0, 2.0], 0.5, 2),
            Err(Error::InsufficientSamples { needed: 3, got: 2 })
        ));
        assert!(estimate_rate(&[1.0, 2.0, 3.0], 0.0, 1).is_err());
        assert!(estimate_rate(&[1.0, 2.0, 3.0], -1.0, 1).is_err());
    }

    #[test]
    fn theta_times_rate_is_convex_in_theta() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let incs: Vec<f64> = (0..3000).map(|_| rng.gen_range(-1.0..3.0)).collect();
        let samples = WindowSamples::from_increments(&incs, 4).unwrap();
        let grid: Vec<f64> = (1..=20).map(|i| 0.05 * i as f64).collect();
        let g: Vec<f64> = grid
            .iter()
            .map(|&th| th * samples.rate(th).unwrap().value)
            .collect();
        for w in g.windows(3) {
            assert!(w[0] + w[2] - 2.0 * w[1] >= -1e-9);
        }
    }

    #[test]
    fn block_value_of_constant_process_is_one() {
        let cumulative: Vec<f64> = (0..=40).map(|t| 2.5 * t as f64).collect();
        let view = sliding_block_martingale(&cumulative, 0.7, 5).unwrap();
        for t in 0..=view.last_slot() {
            assert_relative_eq!(view.value_at(t).unwrap(), 1.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn evaluation_past_horizon_errors() {
        let cumulative: Vec<f64> = (0..=20).map(|t| t as f64).collect();
        let view = sliding_block_martingale(&cumulative, 0.5, 4).unwrap();
        assert_eq!(view.last_slot(), 16);
        assert!(view.value_at(16).is_ok());
        assert!(matches!(
            view.value_at(17),
            Err(Error::SlotOutOfRange { slot: 21, horizon: 20 })
        ));
    }

    #[test]
    fn unit_mean_of_step_factor_on_held_out_half() {
        // Fit D on the first half, check E[e^{θ(x̄−D)}] = 1 on the second.
        let mut rng = ChaCha8Rng::seed_from_u64(404);
        let incs: Vec<f64> = (0..200_000).map(|_| rng.gen_range(0.0..20.0)).collect();
        let (train, test) = incs.split_at(incs.len() / 2);
        for theta in [1e-4, 1e-3, 1e-2, 1e-1] {
            for wb in [1usize, 8] {
                let d = estimate_rate(train, theta, wb).unwrap().value;
                let held_out = WindowSamples::from_increments(test, wb).unwrap();
                let logs: Vec<f64> = held_out
                    .averages
                    .iter()
                    .map(|&x| theta * (x - d))
                    .collect();
                let (dev, tol) = unit_mean_deviation(&logs);
                assert!(
                    dev <= tol,
                    "theta {theta} wb {wb}: deviation {dev} exceeds {tol}"
                );
            }
        }
    }

    #[test]
    fn prefix_product_conditional_mean_is_flat_across_deciles() {
        // 10^4 paths of ±1 increments with the exact rate: within each
        // decile of M(t), extending one step leaves the mean unchanged.
        let theta = 0.1f64;
        let d = theta.cosh().ln() / theta;
        let t = 20usize;
        let paths = 10_000usize;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut m_t = Vec::with_capacity(paths);
        let mut m_next = Vec::with_capacity(paths);
        for _ in 0..paths {
            let mut x = 0.0f64;
            for _ in 0..t {
                x += if rng.gen::<bool>() { 1.0 } else { -1.0 };
            }
            let log_m = theta * (x - t as f64 * d);
            let step = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            let log_m1 = theta * (x + step - (t + 1) as f64 * d);
            m_t.push(log_m.exp());
            m_next.push(log_m1.exp());
        }
        let mut idx: Vec<usize> = (0..paths).collect();
        idx.sort_by(|&i, &j| m_t[i].partial_cmp(&m_t[j]).unwrap());
        for decile in idx.chunks(paths / 10) {
            let now: f64 = decile.iter().map(|&i| m_t[i]).sum::<f64>() / decile.len() as f64;
            let next: f64 = decile.iter().map(|&i| m_next[i]).sum::<f64>() / decile.len() as f64;
            let ratio = next / now;
            assert!(
                (0.98..=1.02).contains(&ratio),
                "conditional ratio {ratio} outside tolerance"
            );
        }
    }

    #[test]
    fn three_hop_trace_views_are_finite_and_positive() {
        use crate::channel::{ChannelConfig, ChannelModel};
        use crate::traffic::{BurstDistribution, TrafficConfig};

        let traffic =
            TrafficConfig::from_rate(8000.0, 8000.0, BurstDistribution::Fixed, 31).unwrap();
        let horizon = 600;
        let arrivals = crate::traffic::generate_arrivals(&traffic, horizon).unwrap();
        let services: Vec<Vec<u64>> = (0..3)
            .map(|i| {
                let mut c = ChannelConfig::new(ChannelModel::UMa);
                c.seed = 1000 + i;
                crate::channel::draw_service(&c, horizon, 5e-4).unwrap()
            })
            .collect();
        let trace = crate::tandem::simulate(3, &arrivals, &services).unwrap();
        let theta = 1e-5;
        let wb = 20;
        let a1: Vec<f64> = trace.first_hop_arrivals().iter().map(|&v| v as f64).collect();
        let mut views = vec![sliding_block_martingale(&a1, theta, wb).unwrap()];
        for hop in &trace.per_hop {
            let q: Vec<f64> = hop.backlog.iter().map(|&v| v as f64).collect();
            views.push(sliding_block_martingale(&q, theta, wb).unwrap());
        }
        for view in &views {
            assert!(view.rate.value.is_finite());
            for t in 0..=view.last_slot() {
                let v = view.value_at(t).unwrap();
                assert!(v.is_finite() && v > 0.0);
            }
        }
    }

    #[test]
    fn rate_is_finite_across_solver_bracket() {
        // Bit-scale increments at both bracket endpoints stay finite in the
        // log domain.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let incs: Vec<f64> = (0..2000).map(|_| rng.gen_range(0.0..16_000.0)).collect();
        for theta in [1e-8, 10.0] {
            let r = estimate_rate(&incs, theta, 10).unwrap();
            assert!(r.value.is_finite(), "theta {theta}");
        }
    }

    #[test]
    fn always_empty_queue_has_no_busy_period() {
        let trace = QueueTrace::simulate(&[1, 1, 1], &[1, 1, 1]).unwrap();
        assert!(matches!(
            backlog_martingale(&trace, 0.1),
            Err(Error::NoBusyPeriod)
        ));
    }

    #[test]
    fn single_slot_busy_periods_do_not_count() {
        // Busy at t=1 and t=3 only, never two slots in a row.
        let trace = QueueTrace::simulate(&[3, 0, 3, 0], &[2, 2, 2, 2]).unwrap();
        assert_eq!(trace.backlog, vec![0, 1, 0, 1, 0]);
        assert!(matches!(
            backlog_martingale(&trace, 0.1),
            Err(Error::NoBusyPeriod)
        ));
    }

    #[test]
    fn backlog_view_product_form_matches_exponent_form() {
        // One uninterrupted busy period from the empty state: the product of
        // per-slot factors equals e^{θ(Q(t) − t D)} exactly.
        let arrivals = vec![5, 3, 6, 2, 4, 7, 1, 5];
        let service = vec![2u64; 8];
        let trace = QueueTrace::simulate(&arrivals, &service).unwrap();
        assert!(trace.backlog[1..].iter().all(|&q| q > 0));
        let theta = 0.05;
        let view = backlog_martingale(&trace, theta).unwrap();
        for t in 1..view.process.len() {
            let product: f64 = (0..t)
                .map(|i| (theta * (view.process[i + 1] - view.process[i] - view.rate.value)).exp())
                .product();
            let direct = view.log_prefix_at(t).unwrap().exp();
            assert_relative_eq!(product, direct, max_relative = 1e-10);
            assert_relative_eq!(
                direct,
                (theta * (trace.backlog[t] as f64 - t as f64 * view.rate.value)).exp(),
                max_relative = 1e-10
            );
        }
    }

    #[test]
    fn busy_increment_unit_mean_over_many_busy_slots() {
        // Heavily loaded queue: 10^5+ busy slots; the fitted one-step factor
        // has unit mean on a held-out portion at bit-scale θ.
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let horizon = 300_000;
        let arrivals: Vec<u64> = (0..horizon).map(|_| rng.gen_range(0..13)).collect();
        let service = vec![6u64; horizon];
        let trace = QueueTrace::simulate(&arrivals, &service).unwrap();
        let busy = busy_increments(&trace).unwrap();
        assert!(busy.len() >= 100_000, "only {} busy slots", busy.len());
        let (train, test) = busy.split_at(busy.len() / 2);
        let theta = 0.01;
        let d = estimate_rate(train, theta, 1).unwrap().value;
        let logs: Vec<f64> = test.iter().map(|&q| theta * (q - d)).collect();
        let (dev, tol) = unit_mean_deviation(&logs);
        assert!(dev <= tol.max(0.01), "deviation {dev} tolerance {tol}");
    }

    #[test]
    fn csv_dump_has_row_per_slot() {
        let cumulative: Vec<f64> = (0..=30).map(|t| 1.5 * t as f64).collect();
        let view = sliding_block_martingale(&cumulative, 0.2, 3).unwrap();
        let mut buf = Vec::new();
        view.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,m_sb");
        assert_eq!(lines.len(), view.last_slot() + 2);
    }
}
