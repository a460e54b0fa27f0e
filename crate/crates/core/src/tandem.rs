//! Tandem of FIFO work-conserving queues.
//!
//! Hop 1 is fed by the exogenous arrival process; each later hop is fed by
//! the previous hop's departures. Per hop and slot, with backlog Q(t),
//! arrivals a(t) and service s(t):
//!
//!   Q(t) = max{0, Q(t-1) + a(t) - s(t)},        Q(0) = 0
//!   A(t) = sum of a up to t,  A*(t) = A(t) - Q(t)  (cumulative departures)
//!
//! All quantities are whole bits. The virtual delay at slot t is the number
//! of extra slots until the whole tandem has pushed out everything that had
//! arrived at hop 1 by slot t.

use crate::{Error, Result};

/// Per-hop sample path over the full horizon. Per-slot vectors have length
/// T; cumulative vectors have length T + 1 with index 0 = slot 0 = empty
/// system.
#[derive(Debug, Clone)]
pub struct QueueTrace {
    /// Arrivals into this hop per slot, bits.
    pub arrivals: Vec<u64>,
    /// Service offered by this hop per slot, bits.
    pub service: Vec<u64>,
    /// Backlog increment q(t) = Q(t) - Q(t-1), bits (negative when draining).
    pub increments: Vec<i64>,
    /// Backlog Q(t), bits; index t, length T + 1.
    pub backlog: Vec<u64>,
    /// Cumulative arrivals A(t); index t, length T + 1.
    pub cum_arrivals: Vec<u64>,
    /// Cumulative offered service S(t); index t, length T + 1.
    pub cum_service: Vec<u64>,
    /// Cumulative departures A*(t) = A(t) - Q(t); index t, length T + 1.
    pub cum_departures: Vec<u64>,
}

impl QueueTrace {
    /// Single FIFO queue fed by `arrivals` and drained by `service`.
    pub fn simulate(arrivals: &[u64], service: &[u64]) -> Result<Self> {
        if arrivals.is_empty() {
            return Err(Error::EmptyInput("arrivals"));
        }
        if arrivals.len() != service.len() {
            return Err(Error::ShapeMismatch(format!(
                "arrivals span {} slots but service spans {}",
                arrivals.len(),
                service.len()
            )));
        }
        let horizon = arrivals.len();
        let mut backlog = Vec::with_capacity(horizon + 1);
        let mut cum_arrivals = Vec::with_capacity(horizon + 1);
        let mut cum_service = Vec::with_capacity(horizon + 1);
        let mut cum_departures = Vec::with_capacity(horizon + 1);
        let mut increments = Vec::with_capacity(horizon);
        backlog.push(0u64);
        cum_arrivals.push(0u64);
        cum_service.push(0u64);
        cum_departures.push(0u64);
        let mut q: u64 = 0;
        let mut a_cum: u64 = 0;
        let mut s_cum: u64 = 0;
        for t in 0..horizon {
            let prev = q;
            let loaded = q as u128 + arrivals[t] as u128;
            let next = loaded.saturating_sub(service[t] as u128);
            q = u64::try_from(next).map_err(|_| {
                Error::Unstable(format!("backlog exceeded u64 range at slot {}", t + 1))
            })?;
            a_cum = a_cum.checked_add(arrivals[t]).ok_or_else(|| {
                Error::Unstable(format!("cumulative arrivals overflowed at slot {}", t + 1))
            })?;
            s_cum = s_cum.saturating_add(service[t]);
            increments.push(q as i64 - prev as i64);
            backlog.push(q);
            cum_arrivals.push(a_cum);
            cum_service.push(s_cum);
            cum_departures.push(a_cum - q);
        }
        Ok(QueueTrace {
            arrivals: arrivals.to_vec(),
            service: service.to_vec(),
            increments,
            backlog,
            cum_arrivals,
            cum_service,
            cum_departures,
        })
    }

    pub fn horizon(&self) -> usize {
        self.arrivals.len()
    }

    /// Departures of this hop per slot, bits.
    pub fn departures_per_slot(&self) -> Vec<u64> {
        self.cum_departures
            .windows(2)
            .map(|w| w[1] - w[0])
            .collect()
    }
}

/// Sample path of the whole tandem for one realization.
#[derive(Debug, Clone)]
pub struct TandemTrace {
    pub per_hop: Vec<QueueTrace>,
}

impl TandemTrace {
    pub fn hops(&self) -> usize {
        self.per_hop.len()
    }

    pub fn horizon(&self) -> usize {
        self.per_hop[0].horizon()
    }

    /// Cumulative exogenous arrivals A_1(t).
    pub fn first_hop_arrivals(&self) -> &[u64] {
        &self.per_hop[0].cum_arrivals
    }

    /// Cumulative departures of the last hop, i.e. of the whole tandem.
    pub fn tandem_departures(&self) -> &[u64] {
        &self.per_hop[self.per_hop.len() - 1].cum_departures
    }

    /// Total backlog over all hops at slot t, bits.
    pub fn total_backlog(&self, t: usize) -> u64 {
        self.per_hop.iter().map(|h| h.backlog[t]).sum()
    }
}

/// Simulates `hops` FIFO queues in series. `services[i]` is the service
/// trace of hop i; every trace must span the same horizon as `arrivals`.
pub fn simulate(hops: usize, arrivals: &[u64], services: &[Vec<u64>]) -> Result<TandemTrace> {
    if hops == 0 {
        return Err(Error::Config("a tandem needs at least one hop".into()));
    }
    if services.len() != hops {
        return Err(Error::ShapeMismatch(format!(
            "{} service traces supplied for {} hops",
            services.len(),
            hops
        )));
    }
    let mut per_hop = Vec::with_capacity(hops);
    let mut feed = arrivals.to_vec();
    for service in services {
        let hop = QueueTrace::simulate(&feed, service)?;
        feed = hop.departures_per_slot();
        per_hop.push(hop);
    }
    Ok(TandemTrace { per_hop })
}

/// Virtual delay observed at a slot: either the exact number of slots, or a
/// censor marker when the horizon ended before the tandem caught up.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Delay {
    Observed(usize),
    /// Every slot up to the horizon still left data in flight; the delay
    /// exceeds the remaining horizon.
    Censored { exceeds: usize },
}

impl Delay {
    /// Whether the delay is at least `wb` slots. Censored observations count
    /// as exceedances; callers size the horizon so the censor margin covers
    /// every probed `wb`.
    pub fn at_least(&self, wb: usize) -> bool {
        match *self {
            Delay::Observed(w) => w >= wb,
            Delay::Censored { .. } => true,
        }
    }

    pub fn is_censored(&self) -> bool {
        matches!(self, Delay::Censored { .. })
    }

    /// Whether the data in flight at the measurement slot was still
    /// undelivered `wb` slots later (W > wb). This is the exceedance event
    /// of the unreliability target: it is contained slot-for-slot in
    /// {total_backlog(t+wb) ≥ A_1(t+wb) − A_1(t)}, which the bound machinery
    /// works with. Censored observations count as exceedances.
    pub fn exceeds(&self, wb: usize) -> bool {
        match *self {
            Delay::Observed(w) => w > wb,
            Delay::Censored { .. } => true,
        }
    }
}

/// Virtual delay of the tandem at slot `t`: the smallest lag τ ≥ 0 such that
/// the data that had entered hop 1 by slot t has fully left the last hop by
/// slot t + τ. Equivalently, the smallest τ with
/// total_backlog(t + τ) ≤ A_1(t + τ) - A_1(t).
pub fn delay(trace: &TandemTrace, t: usize) -> Result<Delay> {
    let horizon = trace.horizon();
    if t > horizon {
        return Err(Error::SlotOutOfRange { slot: t, horizon });
    }
    let a1 = trace.first_hop_arrivals();
    for tau in 0..=(horizon - t) {
        if trace.total_backlog(t + tau) <= a1[t + tau] - a1[t] {
            return Ok(Delay::Observed(tau));
        }
    }
    Ok(Delay::Censored {
        exceeds: horizon - t,
    })
}

/// Empirical probability that the delay at slot `t` exceeds each target in
/// `wb_grid`, over a collection of realizations.
pub fn delay_unreliability(
    traces: &[TandemTrace],
    wb_grid: &[usize],
    t: usize,
) -> Result<Vec<f64>> {
    if traces.is_empty() {
        return Err(Error::EmptyInput("traces"));
    }
    let mut counts = vec![0usize; wb_grid.len()];
    for trace in traces {
        let w = delay(trace, t)?;
        for (k, &wb) in wb_grid.iter().enumerate() {
            if w.exceeds(wb) {
                counts[k] += 1;
            }
        }
    }
    Ok(counts
        .iter()
        .map(|&c| c as f64 / traces.len() as f64)
        .collect())
}
