//! Decay-parameter solve and upcrossing machinery.
//!
//! The decay parameter θ of the delay bound is the largest θ̂ that keeps the
//! tandem in its steady-state regime:
//!
//!   Σ_i wb·D_{Q_i}(θ̂) + ΣQ_i(t) ≤ wb·D_{A_1}(θ̂)
//!
//! searched by bisection over (θ_min, hi]. The upper end hi is either the
//! plain bracket ceiling or the occurrence-rate cap
//! ln(mr)/(E[X_msb] + ΣQ_i(t)), where mr bounds how often the delay event
//! {Y ≥ 0} can occur per slot via a Doob-style partition of [a, max Y].

use crate::martingale::WindowSamples;
use crate::tandem::TandemTrace;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::time::Instant;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SolverSettings {
    pub theta_min: f64,
    pub theta_max: f64,
    /// Relative width of the final bracket.
    pub rtol: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            theta_min: 1e-8,
            theta_max: 10.0,
            rtol: 1e-6,
        }
    }
}

/// Doob partition of [a, max Y] into δ-wide sub-intervals.
#[derive(Debug, Clone)]
pub struct UpcrossingPartition {
    pub a: f64,
    /// Mean absolute one-step increment of Y.
    pub delta: f64,
    pub sb_seg: usize,
    /// [sb_l, sb_h] per sub-interval.
    pub sub_intervals: Vec<(f64, f64)>,
    pub max_y: f64,
    /// Mean one-step increment (supermartingale check: ≤ 0 up to noise).
    pub drift: f64,
}

/// Pooled view of the Y samples entering the occurrence-rate estimate.
/// `samples` may be a strided subset; the scalar statistics come from exact
/// full scans.
#[derive(Debug, Clone)]
pub struct PooledY {
    pub samples: Vec<f64>,
    pub delta: f64,
    pub max_y: f64,
    pub drift: f64,
    pub drift_se: f64,
    /// Slots of Y per trace (the T of the per-slot rate normalization).
    pub span_per_trace: f64,
}

/// Number of slots where y exceeds `a` strictly.
pub fn count_exceedances(y: &[f64], a: f64) -> usize {
    y.iter().filter(|&&v| v > a).count()
}

const MAX_SUB_INTERVALS: usize = 50_000_000;

fn build_partition(
    a: f64,
    delta: f64,
    max_y: f64,
    drift: f64,
) -> Result<Option<UpcrossingPartition>> {
    if max_y <= a {
        return Ok(None);
    }
    if !(delta > 0.0) {
        return Err(Error::Degenerate(format!(
            "cannot partition [{a}, {max_y}]: mean absolute increment is {delta}"
        )));
    }
    let sb_seg = ((max_y - a) / delta).ceil() as usize;
    if sb_seg > MAX_SUB_INTERVALS {
        return Err(Error::Degenerate(format!(
            "partition of [{a}, {max_y}] at width {delta} needs {sb_seg} sub-intervals"
        )));
    }
    let sub_intervals = (0..sb_seg)
        .map(|i| {
            let lo = a + delta * i as f64;
            (lo, lo + delta)
        })
        .collect();
    Ok(Some(UpcrossingPartition {
        a,
        delta,
        sb_seg,
        sub_intervals,
        max_y,
        drift,
    }))
}

/// Σ_i 2·Ê[(Y − sb_l^i)^−]/δ over the partition, with (z)^− = max(−z, 0).
/// Sorted samples and prefix sums make each sub-interval O(log n).
fn partition_sum(samples: &[f64], partition: &UpcrossingPartition) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(|x, y| x.partial_cmp(y).expect("non-NaN Y samples"));
    let mut prefix = Vec::with_capacity(sorted.len() + 1);
    let mut acc = 0.0;
    prefix.push(0.0);
    for &v in &sorted {
        acc += v;
        prefix.push(acc);
    }
    let n = sorted.len() as f64;
    let mut total = 0.0;
    for &(sb_l, _) in &partition.sub_intervals {
        let k = sorted.partition_point(|&v| v < sb_l);
        let neg_part_mean = (k as f64 * sb_l - prefix[k]) / n;
        total += 2.0 * neg_part_mean / partition.delta;
    }
    total
}

/// Pools a collection of Y sequences into exact scan statistics plus the
/// full sample list.
fn pool_sequences(y_samples: &[Vec<f64>]) -> Result<PooledY> {
    if y_samples.is_empty() || y_samples.iter().all(|s| s.is_empty()) {
        return Err(Error::EmptyInput("Y sequences"));
    }
    let mut samples = Vec::new();
    let mut abs_sum = 0.0;
    let mut diff_sum = 0.0;
    let mut diff_sq = 0.0;
    let mut diff_count = 0usize;
    let mut max_y = f64::NEG_INFINITY;
    let mut spans = 0usize;
    let mut seqs = 0usize;
    for seq in y_samples {
        if seq.is_empty() {
            continue;
        }
        seqs += 1;
        spans += seq.len();
        for &v in seq {
            max_y = max_y.max(v);
        }
        samples.extend_from_slice(seq);
        for w in seq.windows(2) {
            let d = w[1] - w[0];
            abs_sum += d.abs();
            diff_sum += d;
            diff_sq += d * d;
            diff_count += 1;
        }
    }
    if diff_count == 0 {
        return Err(Error::InsufficientSamples { needed: 2, got: 1 });
    }
    let delta = abs_sum / diff_count as f64;
    let drift = diff_sum / diff_count as f64;
    let var = (diff_sq / diff_count as f64 - drift * drift).max(0.0);
    let drift_se = (var / diff_count as f64).sqrt();
    Ok(PooledY {
        samples,
        delta,
        max_y,
        drift,
        drift_se,
        span_per_trace: spans as f64 / seqs as f64,
    })
}

/// Upper bound on the number of slots with Y > a across a path, per the
/// partition estimate. Returns 0 when no pooled sample exceeds `a`.
pub fn upcrossing_bound(y_samples: &[Vec<f64>], a: f64) -> Result<f64> {
    let pooled = pool_sequences(y_samples)?;
    if pooled.drift > 3.0 * pooled.drift_se + 1e-3 * pooled.delta {
        log::warn!(
            "upcrossing bound on drifting-up data: mean increment {} (se {})",
            pooled.drift,
            pooled.drift_se
        );
    }
    match build_partition(a, pooled.delta, pooled.max_y, pooled.drift)? {
        None => Ok(0.0),
        Some(partition) => Ok(partition_sum(&pooled.samples, &partition)),
    }
}

/// Occurrence rate of {Y ≥ 0} per slot from pooled Y statistics:
/// the partition bound divided by the per-trace span.
pub fn occurrence_rate_from_pooled(pooled: &PooledY) -> Result<f64> {
    let tol = 3.0 * pooled.drift_se + 1e-3 * pooled.delta;
    if pooled.drift > tol {
        return Err(Error::Unstable(format!(
            "Y drifts upward: mean increment {} exceeds tolerance {tol}; \
             the occurrence-rate bound requires a stable (supermartingale) Y",
            pooled.drift
        )));
    }
    match build_partition(0.0, pooled.delta, pooled.max_y, pooled.drift)? {
        None => Ok(0.0),
        Some(partition) => Ok(partition_sum(&pooled.samples, &partition) / pooled.span_per_trace),
    }
}

/// Y window at start slot t: ΣQ_i(t+wb) − A_1(t+wb) + A_1(t).
pub fn y_delay_window(trace: &TandemTrace, t: usize, wb: usize) -> f64 {
    let a1 = trace.first_hop_arrivals();
    trace.total_backlog(t + wb) as f64 - (a1[t + wb] - a1[t]) as f64
}

fn y_delay_sequence(trace: &TandemTrace, wb: usize, warmup: usize) -> Vec<f64> {
    let horizon = trace.horizon();
    if warmup + wb > horizon {
        return Vec::new();
    }
    (warmup..=horizon - wb)
        .map(|t| y_delay_window(trace, t, wb))
        .collect()
}

/// Maximum per-slot occurrence rate of the delay event at lag wb, from the
/// post-warm-up portion of the traces.
pub fn max_occurrence_rate(traces: &[TandemTrace], wb: usize, warmup: usize) -> Result<f64> {
    let sequences: Vec<Vec<f64>> = traces
        .iter()
        .map(|t| y_delay_sequence(t, wb, warmup))
        .collect();
    let pooled = pool_sequences(&sequences)?;
    occurrence_rate_from_pooled(&pooled)
}

/// Everything the feasibility check needs, independent of how the samples
/// were gathered.
#[derive(Debug, Clone)]
pub struct LemmaInputs {
    pub wb: usize,
    /// Window averages of A_1 increments.
    pub arrival_windows: WindowSamples,
    /// Window averages of each hop's backlog increments.
    pub backlog_windows: Vec<WindowSamples>,
    /// ΣQ_i(t), bits.
    pub total_backlog_at_t: f64,
    /// Sample mean of X_msb, bits (cap denominator).
    pub mean_xmsb: f64,
    /// Occurrence-rate bound mr (cap numerator).
    pub mr: f64,
}

impl LemmaInputs {
    pub fn from_traces(traces: &[TandemTrace], wb: usize, warmup: usize) -> Result<Self> {
        if traces.is_empty() {
            return Err(Error::EmptyInput("traces"));
        }
        let hops = traces[0].hops();
        let mut arrival_avgs = Vec::new();
        let mut backlog_avgs = vec![Vec::new(); hops];
        let mut backlog_sum = 0.0;
        let mut backlog_n = 0usize;
        let mut xmsb_sum = 0.0;
        let mut xmsb_n = 0usize;
        for trace in traces {
            if trace.hops() != hops {
                return Err(Error::ShapeMismatch(format!(
                    "trace with {} hops mixed into a {}-hop collection",
                    trace.hops(),
                    hops
                )));
            }
            let horizon = trace.horizon();
            if warmup + wb > horizon {
                return Err(Error::InsufficientSamples {
                    needed: warmup + wb + 1,
                    got: horizon,
                });
            }
            let a1 = trace.first_hop_arrivals();
            for t in warmup..=horizon - wb {
                arrival_avgs.push((a1[t + wb] - a1[t]) as f64 / wb as f64);
                for (i, hop) in trace.per_hop.iter().enumerate() {
                    backlog_avgs[i].push(
                        (hop.backlog[t + wb] as f64 - hop.backlog[t] as f64) / wb as f64,
                    );
                }
                xmsb_sum += crate::bounds::xmsb_window(trace, t, wb);
                xmsb_n += 1;
            }
            for t in warmup..=horizon {
                backlog_sum += trace.total_backlog(t) as f64;
                backlog_n += 1;
            }
        }
        let mr = max_occurrence_rate(traces, wb, warmup)?;
        Ok(LemmaInputs {
            wb,
            arrival_windows: WindowSamples {
                window_wb: wb,
                averages: arrival_avgs,
            },
            backlog_windows: backlog_avgs
                .into_iter()
                .map(|averages| WindowSamples {
                    window_wb: wb,
                    averages,
                })
                .collect(),
            total_backlog_at_t: backlog_sum / backlog_n as f64,
            mean_xmsb: xmsb_sum / xmsb_n as f64,
            mr,
        })
    }

    /// Steady-state slack at θ: wb·D_{A_1}(θ) − Σ_i wb·D_{Q_i}(θ) − ΣQ(t).
    /// Feasible means slack ≥ 0.
    pub fn slack(&self, theta: f64) -> Result<f64> {
        let wb = self.wb as f64;
        let d_arrival = self.arrival_windows.rate(theta)?.value;
        let mut d_backlogs = 0.0;
        for w in &self.backlog_windows {
            d_backlogs += w.rate(theta)?.value;
        }
        Ok(wb * d_arrival - wb * d_backlogs - self.total_backlog_at_t)
    }

    /// Eq.-style cap ln(mr)/(E[X_msb] + ΣQ(t)), or the reason it does not
    /// apply.
    pub fn theta_cap(&self) -> std::result::Result<f64, &'static str> {
        if self.mr <= 0.0 {
            return Err("mr = 0: delay event unseen in estimation data");
        }
        if self.mr > 1.0 {
            return Err("mr > 1: occurrence-rate bound vacuous");
        }
        let denom = self.mean_xmsb + self.total_backlog_at_t;
        if denom >= 0.0 {
            return Err("E[X_msb] + backlog is not negative");
        }
        Ok(self.mr.ln() / denom)
    }
}

#[derive(Debug, Clone)]
pub struct ThetaSolution {
    pub theta: f64,
    pub mr: f64,
    /// NaN when the cap was not applied.
    pub theta_cap: f64,
    /// Number of feasibility (slack) evaluations.
    pub iterations: usize,
    pub bracket_initial: (f64, f64),
    pub bracket_final: (f64, f64),
    pub wall_time: f64,
    /// Slack at the returned θ (≥ 0).
    pub slack_at_theta: f64,
    /// Why the cap was not used, when it was not.
    pub fallback: Option<&'static str>,
    /// Every feasible probe sat below every infeasible probe (the feasible
    /// set looked like an interval in this run's evaluations).
    pub interval_structure_ok: bool,
}

/// Interior verification density used before a feasible bracket top is
/// accepted: probes per decade of θ.
const SCAN_PER_DECADE: f64 = 3.0;

/// Finds the largest feasible θ in (θ_min, hi]; `use_cap` selects the
/// occurrence-rate cap as hi when it applies.
///
/// The feasible set is treated as an interval rising from θ_min, but
/// that shape is verified per run rather than assumed. A feasible bracket
/// top is accepted only after log-spaced interior probes confirm no sign
/// change below it; if the top or any interior probe is infeasible, the
/// first crossing is bisected to `rtol`. Every slack evaluation counts
/// toward `iterations`, so bracket width is what separates the capped and
/// uncapped variants of the same procedure.
pub fn solve(inputs: &LemmaInputs, settings: &SolverSettings, use_cap: bool) -> Result<ThetaSolution> {
    if !(settings.theta_min > 0.0 && settings.theta_max > settings.theta_min) {
        return Err(Error::Config(format!(
            "solver bracket ({}, {}) is not a positive interval",
            settings.theta_min, settings.theta_max
        )));
    }
    let start = Instant::now();
    let (cap, fallback) = if use_cap {
        match inputs.theta_cap() {
            Ok(cap) if cap > settings.theta_min => (cap.min(settings.theta_max), None),
            Ok(_) => (settings.theta_max, Some("cap below bracket floor")),
            Err(reason) => (settings.theta_max, Some(reason)),
        }
    } else {
        (settings.theta_max, None)
    };
    let cap_for_record = if use_cap && fallback.is_none() {
        cap
    } else {
        f64::NAN
    };
    let lo0 = settings.theta_min;
    let hi0 = cap;
    let mut profile: Vec<(f64, f64)> = Vec::new();
    let mut evals = 0usize;
    let probe = |theta: f64, evals: &mut usize, profile: &mut Vec<(f64, f64)>| -> Result<f64> {
        let s = inputs.slack(theta)?;
        *evals += 1;
        profile.push((theta, s));
        Ok(s)
    };
    let slack_lo = probe(lo0, &mut evals, &mut profile)?;
    if slack_lo < 0.0 {
        let _ = probe(hi0, &mut evals, &mut profile);
        return Err(Error::Infeasible {
            message: format!(
                "steady-state condition fails at the bracket floor θ = {lo0} (slack {slack_lo})"
            ),
            slack_profile: profile,
        });
    }
    let slack_hi = probe(hi0, &mut evals, &mut profile)?;
    let bisect = |mut lo: f64,
                  mut hi: f64,
                  mut slack_best: f64,
                  evals: &mut usize,
                  profile: &mut Vec<(f64, f64)>|
     -> Result<(f64, f64, (f64, f64))> {
        while hi - lo > settings.rtol * hi {
            let mid = 0.5 * (lo + hi);
            let s = probe(mid, evals, profile)?;
            if s >= 0.0 {
                lo = mid;
                slack_best = s;
            } else {
                hi = mid;
            }
        }
        Ok((lo, slack_best, (lo, hi)))
    };
    let (theta, slack_at_theta, bracket_final) = if slack_hi < 0.0 {
        bisect(lo0, hi0, slack_lo, &mut evals, &mut profile)?
    } else {
        // The top probe alone cannot tell a feasible interval from a dip
        // that recovers; walk the interior before trusting it.
        let decades = (hi0 / lo0).log10();
        let steps = (decades * SCAN_PER_DECADE).ceil() as usize;
        let mut crossing = None;
        let mut last_feasible = (lo0, slack_lo);
        for k in 1..steps {
            let theta_k = lo0 * 10f64.powf(k as f64 / SCAN_PER_DECADE);
            if theta_k >= hi0 {
                break;
            }
            let s = probe(theta_k, &mut evals, &mut profile)?;
            if s < 0.0 {
                crossing = Some(theta_k);
                break;
            }
            last_feasible = (theta_k, s);
        }
        match crossing {
            Some(first_infeasible) => bisect(
                last_feasible.0,
                first_infeasible,
                last_feasible.1,
                &mut evals,
                &mut profile,
            )?,
            None => (hi0, slack_hi, (hi0, hi0)),
        }
    };
    let mut max_feasible = f64::NEG_INFINITY;
    let mut min_infeasible = f64::INFINITY;
    for &(th, s) in &profile {
        if s >= 0.0 {
            max_feasible = max_feasible.max(th);
        } else {
            min_infeasible = min_infeasible.min(th);
        }
    }
    let interval_structure_ok = max_feasible < min_infeasible;
    Ok(ThetaSolution {
        theta,
        mr: inputs.mr,
        theta_cap: cap_for_record,
        iterations: evals,
        bracket_initial: (lo0, hi0),
        bracket_final,
        wall_time: start.elapsed().as_secs_f64(),
        slack_at_theta,
        fallback,
        interval_structure_ok,
    })
}

/// Capped and uncapped solves on the same inputs, for iteration-count
/// comparisons.
pub fn solve_pair(
    inputs: &LemmaInputs,
    settings: &SolverSettings,
) -> Result<(ThetaSolution, ThetaSolution)> {
    let capped = solve(inputs, settings, true)?;
    let uncapped = solve(inputs, settings, false)?;
    Ok((capped, uncapped))
}

/// Solves θ for a trace collection at window wb (capped program).
pub fn solve_theta(
    traces: &[TandemTrace],
    wb: usize,
    warmup: usize,
    settings: &SolverSettings,
) -> Result<ThetaSolution> {
    let inputs = LemmaInputs::from_traces(traces, wb, warmup)?;
    solve(&inputs, settings, true)
}
