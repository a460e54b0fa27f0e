//! Estimation-side diagnostics for one scenario file, optionally across a
//! hop ladder: occurrence rate, cap position, feasibility slack profile,
//! solve iteration counts, the bound per delay target and raw exceedance
//! frequencies from a few estimation traces.
//!
//! Useful when tuning a scenario file: the solver wants the slack to start
//! positive, cross zero once below the bracket ceiling, and hold the
//! occurrence-rate cap inside the feasible region with margin.
//!
//! Usage:
//!   cargo run --release -p delayqos --example slack_profile -- \
//!     <config> [hops,hops,...] [section.key=value]...

use std::path::Path;

use delayqos::bounds;
use delayqos::config;
use delayqos::montecarlo::{estimation_pass, simulate_realization};
use delayqos::solver::{self, y_delay_window};

fn main() {
    let mut args = std::env::args().skip(1);
    let path = args.next().expect("usage: slack_profile <config> [hops,...] [key=value]...");
    let hops_arg: Vec<usize> = args
        .next()
        .map(|s| s.split(',').map(|h| h.parse().expect("hop count")).collect())
        .unwrap_or_default();
    let overrides: Vec<String> = args.collect();

    let parsed = config::load(Path::new(&path), &overrides).expect("config");
    let base = parsed.scenario;
    let ladder = if hops_arg.is_empty() { vec![base.hops] } else { hops_arg };

    for hops in ladder {
        let mut scn = base.clone();
        scn.id = format!("{}-{}hop", base.id, hops);
        scn.hops = hops;
        let template = base.channels.last().expect("nonempty").clone();
        scn.channels = (0..hops)
            .map(|i| base.channels.get(i).cloned().unwrap_or_else(|| template.clone()))
            .collect();

        let moment_wbs = scn.wb_grid.clone();
        let solve_wbs = vec![scn.wb_ref];
        let est = estimation_pass(&scn, &moment_wbs, &solve_wbs).expect("estimation");
        let inputs = &est.lemma[&scn.wb_ref];

        println!("== {} ==", scn.id);
        println!(
            "  wb_ref {} mr {:.4e} backlog {:.1} mean_xmsb {:.1} service {:.1}",
            scn.wb_ref,
            inputs.mr,
            inputs.total_backlog_at_t,
            inputs.mean_xmsb,
            est.mean_service_rate
        );
        match inputs.theta_cap() {
            Ok(cap) => println!(
                "  cap {:.6e} slack_at_cap {:.1}",
                cap,
                inputs.slack(cap).expect("slack")
            ),
            Err(reason) => println!("  cap unavailable: {reason}"),
        }

        let (lo, hi) = (scn.solver.theta_min, scn.solver.theta_max);
        let points = 12;
        let mut previous: Option<f64> = None;
        for k in 0..=points {
            let theta = lo * (hi / lo).powf(k as f64 / points as f64);
            let slack = inputs.slack(theta).expect("slack");
            let crossed = matches!(previous, Some(p) if (p >= 0.0) != (slack >= 0.0));
            println!(
                "  theta {theta:.4e} slack {slack:>14.1}{}",
                if crossed { "  <- sign change" } else { "" }
            );
            previous = Some(slack);
        }

        let (capped, uncapped) = solver::solve_pair(inputs, &scn.solver).expect("solve");
        println!(
            "  solve: capped theta {:.4e} in {} evals (fallback {:?}), uncapped theta {:.4e} in {} evals",
            capped.theta, capped.iterations, capped.fallback, uncapped.theta, uncapped.iterations
        );

        let probe_traces = scn.estimation_count.min(8);
        let traces: Vec<_> = (0..probe_traces as u64)
            .map(|r| simulate_realization(&scn, r, scn.estimation_span).expect("trace"))
            .collect();
        for &wb in &scn.wb_grid {
            let xm = bounds::log_moment_from_samples(&est.xmsb_pools[&wb], capped.theta)
                .expect("moment");
            let (_, bound) = bounds::bound_value(xm.log_moment, capped.theta, est.c_bar);
            let mut pos = 0u64;
            let mut nonneg = 0u64;
            let mut n = 0u64;
            for trace in &traces {
                for t in scn.warmup..=trace.horizon() - wb {
                    let y = y_delay_window(trace, t, wb);
                    if y > 0.0 {
                        pos += 1;
                    }
                    if y >= 0.0 {
                        nonneg += 1;
                    }
                    n += 1;
                }
            }
            println!(
                "  wb {wb:>3} bound {bound:.4e} mr {:.4e} freq(Y>0) {:.4e} freq(Y>=0) {:.4e}",
                est.mr_by_wb[&wb],
                pos as f64 / n as f64,
                nonneg as f64 / n as f64,
            );
        }
    }
}
