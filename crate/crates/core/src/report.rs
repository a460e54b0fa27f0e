//! CSV artifacts and the run manifest.
//!
//! Every artifact is hashed and written atomically (temp file in the
//! target directory, then rename), so a crash never leaves a half-written
//! file and the manifest can pin a checksum for everything it lists. Small
//! tables are staged in memory; bulk trace dumps stream through the hash.
//! Nothing time- or machine-dependent goes into the files: floats print in
//! shortest round-trip form and wall-clock solver timings stay on the log
//! output. A rerun with the same config and master seed reproduces every
//! byte at any worker count.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::montecarlo::{ComparisonReport, ProvisionMatrix, ProvisionRow, Scenario};
use crate::tandem::TandemTrace;
use crate::{Error, Result};

/// Sink for one run's files: writes atomically into a directory and
/// remembers checksums for the manifest.
pub struct Artifacts {
    dir: PathBuf,
    checksums: BTreeMap<String, String>,
}

impl Artifacts {
    /// Creates the output directory if needed.
    pub fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Artifacts {
            dir: dir.to_path_buf(),
            checksums: BTreeMap::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Writes one artifact and records its checksum.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        write_atomic(&path, bytes)?;
        self.checksums.insert(name.to_string(), sha256_hex(bytes));
        Ok(path)
    }

    /// Streams one artifact through `build`, hashing bytes as they pass,
    /// for files too large to stage in memory. Same temp-plus-rename
    /// discipline as [`Artifacts::write`].
    pub fn write_stream<F>(&mut self, name: &str, build: F) -> Result<PathBuf>
    where
        F: FnOnce(&mut dyn Write) -> Result<()>,
    {
        let path = self.dir.join(name);
        let tmp = temp_sibling(&path)?;
        let result = (|| -> Result<String> {
            let file = fs::File::create(&tmp)?;
            let mut sink = io::BufWriter::new(HashingWriter {
                inner: file,
                hasher: Sha256::new(),
            });
            build(&mut sink)?;
            sink.flush()?;
            let hashing = sink
                .into_inner()
                .map_err(|e| Error::Io(io::Error::from(e.error().kind())))?;
            Ok(hashing
                .hasher
                .finalize()
                .iter()
                .map(|b| format!("{b:02x}"))
                .collect())
        })();
        match result.and_then(|digest| {
            fs::rename(&tmp, &path)?;
            Ok(digest)
        }) {
            Ok(digest) => {
                self.checksums.insert(name.to_string(), digest);
                Ok(path)
            }
            Err(e) => {
                let _ = fs::remove_file(&tmp);
                Err(e)
            }
        }
    }

    /// Writes `run_manifest.toml` capturing the resolved inputs and the
    /// checksums of everything written so far.
    pub fn write_manifest(&self, run: &RunManifest) -> Result<PathBuf> {
        let text = manifest_text(run, &self.checksums)?;
        let path = self.dir.join("run_manifest.toml");
        write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }
}

struct HashingWriter<W: Write> {
    inner: W,
    hasher: Sha256,
}

impl<W: Write> Write for HashingWriter<W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.hasher.update(&buf[..n]);
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

/// Resolved inputs of one invocation. Together with the artifact checksums
/// this pins everything needed to reproduce the run.
#[derive(Debug, Serialize)]
pub struct RunManifest<'a> {
    pub command: &'a str,
    pub config: &'a str,
    pub overrides: &'a [String],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hop_range: Option<Vec<usize>>,
    pub scenario: &'a Scenario,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub provision: Option<&'a ProvisionMatrix>,
}

fn manifest_text(run: &RunManifest, checksums: &BTreeMap<String, String>) -> Result<String> {
    #[derive(Serialize)]
    struct Doc<'a> {
        #[serde(flatten)]
        run: &'a RunManifest<'a>,
        artifacts: &'a BTreeMap<String, String>,
    }
    // Going through a Value tree lets the TOML writer order values ahead of
    // tables regardless of struct field order.
    let value = toml::Value::try_from(Doc {
        run,
        artifacts: checksums,
    })
    .map_err(|e| Error::Config(format!("manifest serialization: {e}")))?;
    toml::to_string_pretty(&value)
        .map_err(|e| Error::Config(format!("manifest serialization: {e}")))
}

fn temp_sibling(path: &Path) -> Result<PathBuf> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::Config(format!("artifact path `{}` has no file name", path.display())))?;
    Ok(dir.join(format!(".{name}.tmp{}", std::process::id())))
}

/// Writes via a temp file in the same directory plus rename, so readers
/// never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = temp_sibling(path)?;
    fs::write(&tmp, bytes)?;
    match fs::rename(&tmp, path) {
        Ok(()) => Ok(()),
        Err(e) => {
            let _ = fs::remove_file(&tmp);
            Err(e.into())
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Shortest round-trip decimal form; what every CSV cell uses.
fn num(v: f64) -> String {
    format!("{v}")
}

fn csv_bytes(build: impl FnOnce(&mut csv::Writer<Vec<u8>>) -> Result<()>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    build(&mut w)?;
    Ok(w.into_inner().expect("writing to a Vec cannot fail"))
}

/// Per-window bound-versus-simulation table for one scenario.
pub fn report_csv(report: &ComparisonReport) -> Result<Vec<u8>> {
    csv_bytes(|w| {
        w.write_record([
            "scenario",
            "hops",
            "wb_slots",
            "wb_ms",
            "theta",
            "bound",
            "bound_raw",
            "empirical",
            "y_frequency",
            "mr",
            "deviation",
            "batch_min",
            "batch_q25",
            "batch_median",
            "batch_q75",
            "batch_max",
        ])?;
        for r in &report.rows {
            w.write_record(&[
                report.scenario_id.clone(),
                report.hops.to_string(),
                r.wb_slots.to_string(),
                num(r.wb_ms),
                num(r.theta),
                num(r.bound),
                num(r.bound_raw),
                num(r.empirical),
                num(r.y_frequency),
                num(r.mr),
                num(r.deviation),
                num(r.batches.min),
                num(r.batches.q25),
                num(r.batches.median),
                num(r.batches.q75),
                num(r.batches.max),
            ])?;
        }
        Ok(())
    })
}

/// Solve diagnostics, one row per (window, capped/uncapped) pair. Wall
/// times are deliberately absent; they vary run to run.
pub fn solver_csv(report: &ComparisonReport) -> Result<Vec<u8>> {
    csv_bytes(|w| {
        w.write_record([
            "scenario",
            "wb_slots",
            "mode",
            "theta",
            "theta_cap",
            "mr",
            "iterations",
            "bracket_lo",
            "bracket_hi",
            "slack_at_theta",
            "fallback",
            "interval_structure_ok",
        ])?;
        for s in &report.solutions {
            for (mode, sol) in [("capped", &s.capped), ("uncapped", &s.uncapped)] {
                w.write_record(&[
                    report.scenario_id.clone(),
                    s.wb.to_string(),
                    mode.to_string(),
                    num(sol.theta),
                    num(sol.theta_cap),
                    num(sol.mr),
                    sol.iterations.to_string(),
                    num(sol.bracket_final.0),
                    num(sol.bracket_final.1),
                    num(sol.slack_at_theta),
                    sol.fallback.unwrap_or("").to_string(),
                    sol.interval_structure_ok.to_string(),
                ])?;
            }
        }
        Ok(())
    })
}

/// One summary row per scenario of a hop sweep.
pub fn sweep_summary_csv(reports: &[ComparisonReport]) -> Result<Vec<u8>> {
    csv_bytes(|w| {
        w.write_record([
            "scenario",
            "hops",
            "rmse",
            "max_deviation",
            "tail_ratio",
            "theta_ref",
            "iterations_capped",
            "iterations_uncapped",
            "censored",
            "eval_count",
            "mean_total_backlog",
        ])?;
        for r in reports {
            let lead = &r.solutions[0];
            w.write_record(&[
                r.scenario_id.clone(),
                r.hops.to_string(),
                num(r.rmse),
                num(r.max_deviation),
                num(r.tail_ratio()),
                num(lead.capped.theta),
                lead.capped.iterations.to_string(),
                lead.uncapped.iterations.to_string(),
                r.censored.to_string(),
                r.eval_count.to_string(),
                num(r.total_backlog_at_t),
            ])?;
        }
        Ok(())
    })
}

/// Minimum service rate per (traffic, delay target, epsilon) cell.
/// `slot_seconds` converts the per-slot rate into Mbps for the same row.
pub fn provision_csv(rows: &[ProvisionRow], slot_seconds: f64) -> Result<Vec<u8>> {
    csv_bytes(|w| {
        w.write_record([
            "traffic_mbps",
            "wb_ms",
            "epsilon",
            "c_bits_per_slot",
            "c_mbps",
            "mean_downlink_bits_per_slot",
            "mean_arrival_bits_per_slot",
            "theta",
            "floored",
        ])?;
        for r in rows {
            w.write_record(&[
                num(r.traffic_mbps),
                num(r.wb_ms),
                num(r.epsilon),
                num(r.c_bits_per_slot),
                num(r.c_bits_per_slot / (1e6 * slot_seconds)),
                num(r.mean_downlink_bits_per_slot),
                num(r.mean_arrival_bits_per_slot),
                num(r.theta),
                r.floored.to_string(),
            ])?;
        }
        Ok(())
    })
}

/// Incremental writer for raw sample paths: one row per
/// (realization, hop, slot). Backlog is the level at the end of the slot.
/// Lets a caller stream many realizations without holding them all.
pub struct TraceCsvWriter<W: Write> {
    w: csv::Writer<W>,
}

impl<W: Write> TraceCsvWriter<W> {
    /// Writes the header immediately.
    pub fn new(sink: W) -> Result<Self> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record([
            "realization",
            "hop",
            "slot",
            "arrival_bits",
            "service_bits",
            "backlog_bits",
            "cum_arrivals",
            "cum_departures",
        ])?;
        Ok(TraceCsvWriter { w })
    }

    pub fn append(&mut self, realization: u64, trace: &TandemTrace) -> Result<()> {
        for (hop, q) in trace.per_hop.iter().enumerate() {
            for t in 0..q.horizon() {
                self.w.write_record(&[
                    realization.to_string(),
                    (hop + 1).to_string(),
                    t.to_string(),
                    q.arrivals[t].to_string(),
                    q.service[t].to_string(),
                    q.backlog[t + 1].to_string(),
                    q.cum_arrivals[t + 1].to_string(),
                    q.cum_departures[t + 1].to_string(),
                ])?;
            }
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.w.flush()?;
        Ok(())
    }
}

/// In-memory form of the trace table, for small batches.
pub fn traces_csv(traces: &[(u64, TandemTrace)]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    let mut w = TraceCsvWriter::new(&mut buf)?;
    for (r, trace) in traces {
        w.append(*r, trace)?;
    }
    w.finish()?;
    Ok(buf)
}
