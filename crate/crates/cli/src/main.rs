//! `delayqos`: scenario-driven delay-QoS analysis from the command line.
//!
//! Every scenario lives in a config file; the command line only selects the
//! action, the output directory, and optional key overrides. Artifacts are
//! CSV plus a `run_manifest.toml` pinning the resolved inputs and artifact
//! checksums, so a run can be reproduced byte for byte.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use log::{error, info, warn};

use delayqos::config::{self, ParsedConfig};
use delayqos::montecarlo::{self, ComparisonReport, ProvisionMatrix, Scenario};
use delayqos::report::{self, Artifacts, RunManifest, TraceCsvWriter};
use delayqos::{selftest, Error, Result};

/// The property suites are seeded; reruns reproduce the same verdicts.
const SELFTEST_SEED: u64 = 1;

#[derive(Parser)]
#[command(
    name = "delayqos",
    version,
    about = "Delay-QoS bounds and simulation for multi-hop wireless queues",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate tandem traces and dump them to CSV, no bound analysis.
    ///
    /// Writes one row per realization, hop, and slot; size scales with
    /// realizations * hops * horizon. Use --realizations to keep it small.
    Simulate(RunArgs),
    /// Run one scenario end to end: fit, solve, bound, compare.
    Analyze(RunArgs),
    /// Re-run the scenario across a hop ladder and summarize.
    Sweep {
        #[command(flatten)]
        args: RunArgs,
        /// Hop ladder, both ends inclusive: 2..7, or a single count.
        #[arg(long, value_name = "LO..HI", value_parser = parse_hop_range)]
        hops: HopRange,
    },
    /// Minimum per-hop service rate for each traffic level and QoS target.
    ///
    /// The config needs a [provision] section with the traffic and delay
    /// target axes.
    Provision(RunArgs),
    /// Run the built-in property suites (deterministic, fixed seed).
    Selftest {
        /// Worker threads for the parallel passes. Defaults to all cores.
        #[arg(long, value_name = "N")]
        workers: Option<usize>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Scenario config file.
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Directory for CSV artifacts and the run manifest.
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Worker threads for the parallel passes. Defaults to all cores.
    #[arg(long, value_name = "N")]
    workers: Option<usize>,
    /// Config override, section.key=value. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Shorthand for --set scenario.realizations=N; applied last, so it
    /// wins over --set for the same key.
    #[arg(long, value_name = "N")]
    realizations: Option<usize>,
}

#[derive(Clone, Debug)]
struct HopRange(Vec<usize>);

fn parse_hop_range(s: &str) -> std::result::Result<HopRange, String> {
    let end = |v: &str| {
        v.trim()
            .parse::<usize>()
            .map_err(|_| format!("`{}` is not a hop count", v.trim()))
    };
    let (lo, hi) = if let Some((a, b)) = s.split_once("..=") {
        (end(a)?, end(b)?)
    } else if let Some((a, b)) = s.split_once("..") {
        (end(a)?, end(b)?)
    } else {
        let n = end(s)?;
        (n, n)
    };
    if lo == 0 || hi < lo {
        return Err(format!(
            "hop range `{s}` must run upward from at least 1 (both ends inclusive)"
        ));
    }
    Ok(HopRange((lo..=hi).collect()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            error!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 1 for configuration problems and generic failures, 2 when no feasible
/// decay parameter exists. Selftest failures exit 3 without an Error.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Infeasible { .. } => 2,
        Error::Scenario { source, .. } => exit_code(source),
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Cmd::Simulate(args) => cmd_simulate(&args),
        Cmd::Analyze(args) => cmd_analyze(&args),
        Cmd::Sweep { args, hops } => cmd_sweep(&args, &hops.0),
        Cmd::Provision(args) => cmd_provision(&args),
        Cmd::Selftest { workers } => cmd_selftest(workers),
    }
}

fn prepare(args: &RunArgs) -> Result<(ParsedConfig, Vec<String>)> {
    if let Some(n) = args.workers {
        montecarlo::configure_workers(n)?;
    }
    let mut overrides = args.set.clone();
    if let Some(n) = args.realizations {
        overrides.push(format!("scenario.realizations={n}"));
    }
    let parsed = config::load(&args.config, &overrides)?;
    Ok((parsed, overrides))
}

fn finish(
    art: &Artifacts,
    command: &str,
    args: &RunArgs,
    overrides: &[String],
    scenario: &Scenario,
    provision: Option<&ProvisionMatrix>,
    hop_range: Option<Vec<usize>>,
) -> Result<()> {
    let config = args.config.display().to_string();
    art.write_manifest(&RunManifest {
        command,
        config: &config,
        overrides,
        hop_range,
        scenario,
        provision,
    })?;
    info!("artifacts in {}", art.dir().display());
    Ok(())
}

fn cmd_simulate(args: &RunArgs) -> Result<ExitCode> {
    let (parsed, overrides) = prepare(args)?;
    let scn = &parsed.scenario;
    info!(
        "simulating {} realizations of {} hops over {} slots",
        scn.realizations, scn.hops, scn.horizon
    );
    let t0 = Instant::now();
    let mut art = Artifacts::new(&args.out)?;
    art.write_stream("traces.csv", |w| {
        let mut tw = TraceCsvWriter::new(w)?;
        for r in 0..scn.realizations as u64 {
            let trace = montecarlo::simulate_realization(scn, r, scn.horizon)?;
            tw.append(r, &trace)?;
        }
        tw.finish()
    })?;
    info!("simulate finished in {:.1}s", t0.elapsed().as_secs_f64());
    finish(&art, "simulate", args, &overrides, scn, parsed.provision.as_ref(), None)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_analyze(args: &RunArgs) -> Result<ExitCode> {
    let (parsed, overrides) = prepare(args)?;
    let scn = &parsed.scenario;
    let t0 = Instant::now();
    let rep = montecarlo::run_scenario(scn)?;
    log_report(&rep);
    info!("analyze finished in {:.1}s", t0.elapsed().as_secs_f64());
    let mut art = Artifacts::new(&args.out)?;
    art.write("report.csv", &report::report_csv(&rep)?)?;
    art.write("solver.csv", &report::solver_csv(&rep)?)?;
    finish(&art, "analyze", args, &overrides, scn, parsed.provision.as_ref(), None)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_sweep(args: &RunArgs, hops: &[usize]) -> Result<ExitCode> {
    let (parsed, overrides) = prepare(args)?;
    let scn = &parsed.scenario;
    let t0 = Instant::now();
    let reports = montecarlo::run_hop_sweep(scn, hops)?;
    let mut art = Artifacts::new(&args.out)?;
    for rep in &reports {
        log_report(rep);
        art.write(&format!("report_{}hop.csv", rep.hops), &report::report_csv(rep)?)?;
    }
    art.write("sweep_summary.csv", &report::sweep_summary_csv(&reports)?)?;
    info!(
        "sweep over {} scenarios finished in {:.1}s",
        reports.len(),
        t0.elapsed().as_secs_f64()
    );
    finish(&art, "sweep", args, &overrides, scn, parsed.provision.as_ref(), Some(hops.to_vec()))?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_provision(args: &RunArgs) -> Result<ExitCode> {
    let (parsed, overrides) = prepare(args)?;
    let scn = &parsed.scenario;
    let matrix = parsed.provision.as_ref().ok_or_else(|| {
        Error::Config(format!(
            "`{}` has no [provision] section; the provision subcommand needs one",
            args.config.display()
        ))
    })?;
    let t0 = Instant::now();
    let rows = montecarlo::run_provision(scn, matrix)?;
    for row in &rows {
        info!(
            "{} Mbps, wb {} ms, eps {:.0e}: C = {:.1} bits/slot against arrival mean {:.1}{}",
            row.traffic_mbps,
            row.wb_ms,
            row.epsilon,
            row.c_bits_per_slot,
            row.mean_arrival_bits_per_slot,
            if row.floored { " (floored at stability)" } else { "" }
        );
    }
    info!("provision finished in {:.1}s", t0.elapsed().as_secs_f64());
    let mut art = Artifacts::new(&args.out)?;
    art.write("provision.csv", &report::provision_csv(&rows, scn.slot_seconds)?)?;
    finish(&art, "provision", args, &overrides, scn, Some(matrix), None)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_selftest(workers: Option<usize>) -> Result<ExitCode> {
    if let Some(n) = workers {
        montecarlo::configure_workers(n)?;
    }
    let t0 = Instant::now();
    let suites = selftest::run_all(SELFTEST_SEED);
    let mut failures = 0usize;
    let mut total = 0usize;
    for suite in &suites {
        for c in &suite.checks {
            total += 1;
            if !c.passed {
                failures += 1;
            }
            let status = if c.passed { "PASS" } else { "FAIL" };
            println!("[{status}] {}: {} ({})", suite.name, c.label, c.detail);
        }
    }
    println!(
        "selftest: {}/{} checks passed in {:.1}s",
        total - failures,
        total,
        t0.elapsed().as_secs_f64()
    );
    if failures == 0 {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(3))
    }
}

fn log_report(rep: &ComparisonReport) {
    for s in &rep.solutions {
        info!(
            "{} wb {}: theta {:.6e} in {} evals capped vs {} uncapped ({:.0}% saved), solve {:.2}s",
            rep.scenario_id,
            s.wb,
            s.capped.theta,
            s.capped.iterations,
            s.uncapped.iterations,
            100.0 * (1.0 - s.capped.iterations as f64 / s.uncapped.iterations as f64),
            s.capped.wall_time + s.uncapped.wall_time,
        );
        if let Some(reason) = s.capped.fallback {
            info!("{} wb {}: cap fallback: {reason}", rep.scenario_id, s.wb);
        }
    }
    for row in &rep.rows {
        info!(
            "{} wb {} ({} ms): bound {:.3e}, empirical {:.3e}, mr {:.3e}",
            rep.scenario_id, row.wb_slots, row.wb_ms, row.bound, row.empirical, row.mr
        );
    }
    if rep.censored > 0 {
        warn!(
            "{}: {} of {} evaluation traces censored (delay scan ran past the horizon)",
            rep.scenario_id, rep.censored, rep.eval_count
        );
    }
}
