//! Scenario files and command-line overrides.
//!
//! A scenario is one TOML file with sections `[scenario]`, `[traffic]`,
//! `[qos]`, `[channel.hop.N]`, `[solver]` and, for the provisioning command,
//! `[provision]`. Every error names the offending key and, where the key
//! appears in the file, its line. Unknown keys are rejected, which also
//! validates `--set section.key=value` override paths.
//!
//! Channel sections inherit downward: hop N starts from hop N-1's resolved
//! settings unless it names a `model`, in which case it starts from that
//! model's defaults. `[channel.hop.1]` must name a model. Hops past the
//! highest numbered section repeat the last resolved one.
//!
//! Defaults, where a key is omitted: slots are 0.5 ms; warmup is 10x the
//! largest delay target, the analysis slot sits 2 targets past warmup and
//! the horizon 6 targets past that; 10^4 realizations with a 20% estimation
//! split; estimation traces of at least 10^5 slots; master seed 1; epsilon
//! 10^-5; the reference window is the middle grid point.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use toml::value::{Table, Value};

use crate::bounds;
use crate::channel::{ChannelConfig, ChannelModel, LosMode};
use crate::montecarlo::{ProvisionMatrix, Scenario, EVAL_BATCHES};
use crate::solver::SolverSettings;
use crate::traffic::{BurstDistribution, TrafficConfig};
use crate::{Error, Result};

/// Everything one scenario file can describe.
#[derive(Debug, Clone)]
pub struct ParsedConfig {
    pub scenario: Scenario,
    /// Present when the file has a `[provision]` section.
    pub provision: Option<ProvisionMatrix>,
}

/// Reads and validates a scenario file, applying `section.key=value`
/// overrides after the file parses.
pub fn load(path: &Path, overrides: &[String]) -> Result<ParsedConfig> {
    let text = std::fs::read_to_string(path)?;
    let origin = path.display().to_string();
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("scenario");
    parse(&text, &origin, stem, overrides)
}

/// Parses config text directly; `origin` labels error messages in place of a
/// file path.
pub fn parse_str(text: &str, origin: &str, overrides: &[String]) -> Result<ParsedConfig> {
    parse(text, origin, "scenario", overrides)
}

fn parse(text: &str, origin: &str, default_id: &str, overrides: &[String]) -> Result<ParsedConfig> {
    let mut root: Table = toml::from_str(text).map_err(|e| {
        let at = e
            .span()
            .map(|s| format!("line {}: ", line_of_offset(text, s.start)))
            .unwrap_or_default();
        Error::ConfigParse {
            path: origin.to_string(),
            message: format!("{at}{}", e.message()),
        }
    })?;
    apply_overrides(&mut root, overrides)?;
    let src = Src { origin, text };
    build(&root, &src, default_id)
}

/// Applies `section.key=value` pairs onto the parsed tree. Values are read
/// as TOML (so `true`, `3.5` and `[1, 2]` keep their types); anything that
/// does not parse as TOML is taken as a bare string.
pub fn apply_overrides(root: &mut Table, overrides: &[String]) -> Result<()> {
    for ov in overrides {
        let (key, raw) = ov.split_once('=').ok_or_else(|| {
            Error::Config(format!("override `{ov}` must have the form section.key=value"))
        })?;
        let key = key.trim();
        let segments: Vec<&str> = key.split('.').map(str::trim).collect();
        if segments.iter().any(|s| s.is_empty()) {
            return Err(Error::Config(format!(
                "override key `{key}` has an empty path segment"
            )));
        }
        let mut cur = &mut *root;
        for seg in &segments[..segments.len() - 1] {
            cur = cur
                .entry(seg.to_string())
                .or_insert_with(|| Value::Table(Table::new()))
                .as_table_mut()
                .ok_or_else(|| {
                    Error::Config(format!(
                        "override `{key}` descends through `{seg}`, which is not a section"
                    ))
                })?;
        }
        cur.insert(segments[segments.len() - 1].to_string(), override_value(raw.trim()));
    }
    Ok(())
}

fn override_value(raw: &str) -> Value {
    let doc = format!("v = {raw}");
    match toml::from_str::<Table>(&doc) {
        Ok(mut t) => t.remove("v").expect("just parsed"),
        Err(_) => Value::String(raw.to_string()),
    }
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())]
        .bytes()
        .filter(|&b| b == b'\n')
        .count()
        + 1
}

/// Raw config text kept alongside the parsed tree so errors can quote the
/// line a key was set on.
struct Src<'a> {
    origin: &'a str,
    text: &'a str,
}

impl Src<'_> {
    fn line_of_section(&self, section: &str) -> Option<usize> {
        for (i, line) in self.text.lines().enumerate() {
            if let Some(rest) = line.trim().strip_prefix('[') {
                if rest.split(']').next().map(str::trim) == Some(section) {
                    return Some(i + 1);
                }
            }
        }
        None
    }

    fn line_of_key(&self, section: &str, key: &str) -> Option<usize> {
        let mut current = String::new();
        for (i, line) in self.text.lines().enumerate() {
            let t = line.trim();
            if let Some(rest) = t.strip_prefix('[') {
                if let Some(name) = rest.split(']').next() {
                    current = name.trim().to_string();
                }
                continue;
            }
            if current == section {
                if let Some((lhs, _)) = t.split_once('=') {
                    if lhs.trim() == key {
                        return Some(i + 1);
                    }
                }
            }
        }
        None
    }

    fn anchored(&self, line: Option<usize>, message: String) -> Error {
        let at = line.map(|l| format!("line {l}: ")).unwrap_or_default();
        Error::ConfigParse {
            path: self.origin.to_string(),
            message: format!("{at}{message}"),
        }
    }

    fn key_err(&self, section: &str, key: &str, msg: &str) -> Error {
        let line = self
            .line_of_key(section, key)
            .or_else(|| self.line_of_section(section));
        self.anchored(line, format!("[{section}] key `{key}`: {msg}"))
    }

    fn section_err(&self, section: &str, msg: &str) -> Error {
        self.anchored(self.line_of_section(section), format!("[{section}]: {msg}"))
    }

    fn root_key_err(&self, key: &str, msg: &str) -> Error {
        let line = self
            .line_of_key("", key)
            .or_else(|| self.line_of_section(key));
        self.anchored(line, format!("`{key}`: {msg}"))
    }
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::String(_) => "a string",
        Value::Integer(_) => "an integer",
        Value::Float(_) => "a float",
        Value::Boolean(_) => "a boolean",
        Value::Datetime(_) => "a datetime",
        Value::Array(_) => "an array",
        Value::Table(_) => "a table",
    }
}

trait FromValue: Sized {
    const EXPECTS: &'static str;
    fn from_value(v: &Value) -> Option<Self>;
}

impl FromValue for f64 {
    const EXPECTS: &'static str = "a number";
    fn from_value(v: &Value) -> Option<Self> {
        match v {
            Value::Float(f) => Some(*f),
            Value::Integer(i) => Some(*i as f64),
            _ => None,
        }
    }
}

impl FromValue for usize {
    const EXPECTS: &'static str = "a nonnegative integer";
    fn from_value(v: &Value) -> Option<Self> {
        match v {
            Value::Integer(i) => usize::try_from(*i).ok(),
            _ => None,
        }
    }
}

impl FromValue for u64 {
    const EXPECTS: &'static str = "a nonnegative integer";
    fn from_value(v: &Value) -> Option<Self> {
        match v {
            Value::Integer(i) => u64::try_from(*i).ok(),
            _ => None,
        }
    }
}

impl FromValue for bool {
    const EXPECTS: &'static str = "a boolean";
    fn from_value(v: &Value) -> Option<Self> {
        v.as_bool()
    }
}

impl FromValue for String {
    const EXPECTS: &'static str = "a string";
    fn from_value(v: &Value) -> Option<Self> {
        v.as_str().map(str::to_string)
    }
}

impl FromValue for Vec<usize> {
    const EXPECTS: &'static str = "an array of nonnegative integers";
    fn from_value(v: &Value) -> Option<Self> {
        v.as_array()?.iter().map(usize::from_value).collect()
    }
}

impl FromValue for Vec<f64> {
    const EXPECTS: &'static str = "an array of numbers";
    fn from_value(v: &Value) -> Option<Self> {
        v.as_array()?.iter().map(f64::from_value).collect()
    }
}

/// One section's key accounting: typed getters mark keys as consumed so
/// `finish` can flag leftovers as unknown.
struct Section<'a> {
    src: &'a Src<'a>,
    path: String,
    table: Option<&'a Table>,
    seen: RefCell<BTreeSet<String>>,
}

impl<'a> Section<'a> {
    fn new(src: &'a Src<'a>, path: impl Into<String>, table: Option<&'a Table>) -> Self {
        Section {
            src,
            path: path.into(),
            table,
            seen: RefCell::new(BTreeSet::new()),
        }
    }

    fn raw(&self, key: &str) -> Option<&'a Value> {
        self.seen.borrow_mut().insert(key.to_string());
        self.table.and_then(|t| t.get(key))
    }

    fn req<T: FromValue>(&self, key: &str) -> Result<T> {
        match self.raw(key) {
            None => Err(self.src.key_err(&self.path, key, "missing required key")),
            Some(v) => self.typed(key, v),
        }
    }

    fn opt<T: FromValue>(&self, key: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => self.typed(key, v).map(Some),
        }
    }

    fn opt_or<T: FromValue>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.opt(key)?.unwrap_or(default))
    }

    fn typed<T: FromValue>(&self, key: &str, v: &Value) -> Result<T> {
        T::from_value(v).ok_or_else(|| {
            self.src.key_err(
                &self.path,
                key,
                &format!("expected {}, found {}", T::EXPECTS, type_name(v)),
            )
        })
    }

    fn check(&self, key: &str, ok: bool, msg: impl FnOnce() -> String) -> Result<()> {
        if ok {
            Ok(())
        } else {
            Err(self.src.key_err(&self.path, key, &msg()))
        }
    }

    fn finish(&self) -> Result<()> {
        if let Some(t) = self.table {
            let seen = self.seen.borrow();
            for k in t.keys() {
                if !seen.contains(k) {
                    return Err(self.src.key_err(&self.path, k, "unknown key"));
                }
            }
        }
        Ok(())
    }
}

const SECTIONS: [&str; 6] = ["scenario", "traffic", "qos", "channel", "solver", "provision"];

fn build(root: &Table, src: &Src, default_id: &str) -> Result<ParsedConfig> {
    for (k, v) in root {
        if !SECTIONS.contains(&k.as_str()) {
            return Err(if v.is_table() {
                src.section_err(k, "unknown section")
            } else {
                src.root_key_err(k, "top-level keys must live in a section")
            });
        }
        if !v.is_table() {
            return Err(src.root_key_err(k, "must be a section, not a plain key"));
        }
    }
    for required in ["scenario", "traffic", "qos", "channel"] {
        if !root.contains_key(required) {
            return Err(Error::ConfigParse {
                path: src.origin.to_string(),
                message: format!("missing required section [{required}]"),
            });
        }
    }
    let section =
        |name: &str| Section::new(src, name, root.get(name).and_then(Value::as_table));

    // The grid shapes the time-axis defaults, so [qos] is read first.
    let qos = section("qos");
    let wb_grid: Vec<usize> = qos.req("wb_grid_slots")?;
    qos.check(
        "wb_grid_slots",
        !wb_grid.is_empty() && wb_grid[0] > 0 && wb_grid.windows(2).all(|w| w[0] < w[1]),
        || "must be a strictly increasing list of positive slot counts".into(),
    )?;
    let max_wb = *wb_grid.last().expect("nonempty grid");
    let wb_ref: usize = qos.opt_or("wb_ref_slots", wb_grid[(wb_grid.len() - 1) / 2])?;
    qos.check("wb_ref_slots", wb_ref > 0, || "must be positive".into())?;
    let epsilon: f64 = qos.opt_or("epsilon", 1e-5)?;
    qos.check("epsilon", epsilon > 0.0 && epsilon < 1.0, || {
        format!("must lie in (0, 1), got {epsilon}")
    })?;
    qos.finish()?;

    let sc = section("scenario");
    let id: String = sc.opt_or("id", default_id.to_string())?;
    sc.check("id", !id.is_empty(), || "must not be empty".into())?;
    let hops: usize = sc.req("hops")?;
    sc.check("hops", (1..=16).contains(&hops), || {
        format!("must lie in [1, 16], got {hops}")
    })?;
    let slot_seconds: f64 = sc.opt_or("slot_seconds", 5e-4)?;
    sc.check("slot_seconds", slot_seconds > 0.0, || {
        format!("must be positive, got {slot_seconds}")
    })?;
    let warmup: usize = sc.opt_or("warmup_slots", 10 * max_wb)?;
    let analysis_slot: usize = sc.opt_or("analysis_slot", warmup + 2 * max_wb)?;
    sc.check("analysis_slot", analysis_slot >= warmup, || {
        format!("must not precede the warmup of {warmup} slots")
    })?;
    let horizon: usize = sc.opt_or("horizon_slots", analysis_slot + 6 * max_wb)?;
    sc.check("horizon_slots", horizon >= analysis_slot + 4 * max_wb, || {
        format!(
            "must be at least analysis_slot + 4 * the largest delay target = {}",
            analysis_slot + 4 * max_wb
        )
    })?;
    let realizations: usize = sc.opt_or("realizations", 10_000)?;
    sc.check("realizations", realizations >= 100, || {
        format!("must be at least 100, got {realizations}")
    })?;
    let estimation_count: usize = sc.opt_or(
        "estimation_count",
        Scenario::default_estimation_count(realizations),
    )?;
    sc.check(
        "estimation_count",
        (1..realizations).contains(&estimation_count),
        || format!("must lie in [1, realizations), got {estimation_count}"),
    )?;
    sc.check(
        "estimation_count",
        realizations - estimation_count >= EVAL_BATCHES,
        || format!("leaves fewer than {EVAL_BATCHES} evaluation realizations"),
    )?;
    let wb_top = max_wb.max(wb_ref);
    let estimation_span: usize =
        sc.opt_or("estimation_span", 100_000usize.max(warmup + 2 * wb_top))?;
    sc.check("estimation_span", estimation_span >= warmup + 2 * wb_top, || {
        format!(
            "must cover warmup plus two windows of {wb_top} slots = {}",
            warmup + 2 * wb_top
        )
    })?;
    let windows = (estimation_span - warmup - wb_top + 1) * estimation_count;
    sc.check("estimation_span", windows >= bounds::MIN_WINDOWS, || {
        format!(
            "estimation set yields only {windows} windows at the largest target; need {}",
            bounds::MIN_WINDOWS
        )
    })?;
    let master_seed: u64 = sc.opt_or("master_seed", 1)?;
    let resolve_theta_per_wb: bool = sc.opt_or("resolve_theta_per_wb", false)?;
    sc.finish()?;

    let tr = section("traffic");
    let mbps: Option<f64> = tr.opt("mean_rate_mbps")?;
    let direct: Option<f64> = tr.opt("mean_rate_bits_per_slot")?;
    let (rate_key, rate) = match (mbps, direct) {
        (Some(m), None) => ("mean_rate_mbps", m * 1e6 * slot_seconds),
        (None, Some(r)) => ("mean_rate_bits_per_slot", r),
        (None, None) => {
            return Err(src.section_err(
                "traffic",
                "needs `mean_rate_mbps` or `mean_rate_bits_per_slot`",
            ))
        }
        (Some(_), Some(_)) => {
            return Err(src.key_err(
                "traffic",
                "mean_rate_bits_per_slot",
                "conflicts with `mean_rate_mbps`; give exactly one",
            ))
        }
    };
    tr.check(rate_key, rate > 0.0, || {
        format!("must yield a positive bit rate, got {rate} bits/slot")
    })?;
    let mean_burst_bits: f64 = tr.opt_or("mean_burst_bits", rate)?;
    tr.check("mean_burst_bits", mean_burst_bits > 0.0, || {
        format!("must be positive, got {mean_burst_bits}")
    })?;
    let burst_name: String = tr.opt_or("burst", "fixed".to_string())?;
    let burst = match burst_name.to_ascii_lowercase().as_str() {
        "fixed" => BurstDistribution::Fixed,
        "exponential" => BurstDistribution::Exponential,
        other => {
            return Err(tr.src.key_err(
                "traffic",
                "burst",
                &format!("expected \"fixed\" or \"exponential\", got \"{other}\""),
            ))
        }
    };
    let traffic = TrafficConfig::from_rate(rate, mean_burst_bits, burst, 0)
        .map_err(|e| src.section_err("traffic", &e.to_string()))?;
    tr.finish()?;

    let channels = parse_channels(root, src, hops)?;

    let so = section("solver");
    let defaults = SolverSettings::default();
    let theta_min: f64 = so.opt_or("theta_min", defaults.theta_min)?;
    let theta_max: f64 = so.opt_or("theta_max", defaults.theta_max)?;
    let rtol: f64 = so.opt_or("rtol", defaults.rtol)?;
    so.check("theta_min", theta_min > 0.0 && theta_min < theta_max, || {
        format!("must satisfy 0 < theta_min < theta_max, got {theta_min} vs {theta_max}")
    })?;
    so.check("rtol", rtol > 0.0 && rtol < 1.0, || {
        format!("must lie in (0, 1), got {rtol}")
    })?;
    so.finish()?;

    let provision = if root.contains_key("provision") {
        let pv = section("provision");
        let traffic_mbps: Vec<f64> = pv.req("traffic_mbps")?;
        pv.check(
            "traffic_mbps",
            !traffic_mbps.is_empty() && traffic_mbps.iter().all(|&m| m > 0.0),
            || "must be a nonempty list of positive rates".into(),
        )?;
        let wb_ms: Vec<f64> = pv.req("wb_ms")?;
        pv.check(
            "wb_ms",
            !wb_ms.is_empty() && wb_ms.iter().all(|&w| w > 0.0),
            || "must be a nonempty list of positive delay targets".into(),
        )?;
        let epsilons: Vec<f64> = pv.opt_or("epsilon", vec![epsilon])?;
        pv.check(
            "epsilon",
            !epsilons.is_empty() && epsilons.iter().all(|&e| e > 0.0 && e < 1.0),
            || "must be a nonempty list of values in (0, 1)".into(),
        )?;
        pv.finish()?;
        Some(ProvisionMatrix {
            traffic_mbps,
            wb_ms,
            epsilons,
        })
    } else {
        None
    };

    let scenario = Scenario {
        id,
        hops,
        traffic,
        channels,
        slot_seconds,
        horizon,
        warmup,
        analysis_slot,
        wb_grid,
        wb_ref,
        epsilon,
        realizations,
        estimation_count,
        estimation_span,
        master_seed,
        resolve_theta_per_wb,
        solver: SolverSettings {
            theta_min,
            theta_max,
            rtol,
        },
    };
    // Belt over the per-key checks above: anything they missed still fails
    // here, just without a line anchor.
    scenario.validate().map_err(|e| Error::ConfigParse {
        path: src.origin.to_string(),
        message: e.to_string(),
    })?;
    Ok(ParsedConfig { scenario, provision })
}

fn parse_channels(root: &Table, src: &Src, hops: usize) -> Result<Vec<ChannelConfig>> {
    let channel = root
        .get("channel")
        .and_then(Value::as_table)
        .expect("presence checked by build");
    for k in channel.keys() {
        if k != "hop" {
            return Err(src.key_err(
                "channel",
                k,
                "unknown key; per-hop settings live under [channel.hop.N]",
            ));
        }
    }
    let hop_tbl = channel
        .get("hop")
        .and_then(Value::as_table)
        .ok_or_else(|| src.section_err("channel", "needs at least a [channel.hop.1] section"))?;
    let mut numbered: BTreeMap<usize, &Table> = BTreeMap::new();
    for (k, v) in hop_tbl {
        let n = k
            .parse::<usize>()
            .ok()
            .filter(|n| (1..=16).contains(n))
            .ok_or_else(|| {
                src.section_err(
                    &format!("channel.hop.{k}"),
                    "hop index must be an integer in [1, 16]",
                )
            })?;
        let t = v.as_table().ok_or_else(|| {
            src.key_err("channel.hop", k, "must be a section, not a plain key")
        })?;
        numbered.insert(n, t);
    }
    if !numbered.contains_key(&1) {
        return Err(src.section_err("channel", "missing [channel.hop.1]"));
    }
    if let Some((&top, _)) = numbered.last_key_value() {
        if top > hops {
            return Err(src.section_err(
                &format!("channel.hop.{top}"),
                &format!("hop index exceeds the hop count of {hops}"),
            ));
        }
    }
    let mut resolved: Vec<ChannelConfig> = Vec::with_capacity(hops);
    for hop in 1..=hops {
        let cfg = match numbered.get(&hop) {
            Some(tbl) => parse_channel_section(
                src,
                &format!("channel.hop.{hop}"),
                tbl,
                resolved.last(),
            )?,
            None => resolved.last().expect("hop 1 always present").clone(),
        };
        resolved.push(cfg);
    }
    Ok(resolved)
}

fn parse_channel_section(
    src: &Src,
    path: &str,
    tbl: &Table,
    inherit: Option<&ChannelConfig>,
) -> Result<ChannelConfig> {
    let s = Section::new(src, path, Some(tbl));
    let model_name: Option<String> = s.opt("model")?;
    let mut cfg = match (model_name, inherit) {
        (Some(name), _) => ChannelConfig::new(parse_model(src, path, &name)?),
        (None, Some(prev)) => prev.clone(),
        (None, None) => {
            return Err(src.key_err(path, "model", "hop 1 must name `uma` or `umi`"))
        }
    };
    if let Some(v) = s.opt("carrier_frequency_ghz")? {
        cfg.carrier_frequency_ghz = v;
    }
    if let Some(v) = s.opt("bs_height_m")? {
        cfg.bs_height_m = v;
    }
    if let Some(v) = s.opt("inter_site_distance_m")? {
        cfg.inter_site_distance_m = v;
    }
    if let Some(v) = s.opt("street_width_m")? {
        cfg.street_width_m = v;
    }
    if let Some(v) = s.opt("building_height_m")? {
        cfg.building_height_m = v;
    }
    if let Some(v) = s.opt("shadow_sigma_db")? {
        cfg.shadow_sigma_db = v;
    }
    if let Some(v) = s.opt("link_distance_m")? {
        cfg.link_distance_m = v;
    }
    if let Some(name) = s.opt::<String>("los")? {
        cfg.los = match name.to_ascii_lowercase().as_str() {
            "los" => LosMode::Los,
            "nlos" => LosMode::Nlos,
            "probabilistic" => LosMode::Probabilistic,
            other => {
                return Err(src.key_err(
                    path,
                    "los",
                    &format!("expected \"los\", \"nlos\" or \"probabilistic\", got \"{other}\""),
                ))
            }
        };
    }
    if let Some(v) = s.opt("tx_power_dbm")? {
        cfg.tx_power_dbm = v;
    }
    if let Some(v) = s.opt("noise_density_dbm_hz")? {
        cfg.noise_density_dbm_hz = v;
    }
    if let Some(v) = s.opt("bandwidth_hz")? {
        cfg.bandwidth_hz = v;
    }
    if let Some(v) = s.opt("interferer_powers_dbm")? {
        cfg.interferer_powers_dbm = v;
    }
    s.finish()?;
    cfg.validate()
        .map_err(|e| src.section_err(path, &e.to_string()))?;
    Ok(cfg)
}

fn parse_model(src: &Src, path: &str, name: &str) -> Result<ChannelModel> {
    match name.to_ascii_lowercase().as_str() {
        "uma" => Ok(ChannelModel::UMa),
        "umi" => Ok(ChannelModel::UMi),
        other => Err(src.key_err(
            path,
            "model",
            &format!("expected \"uma\" or \"umi\", got \"{other}\""),
        )),
    }
}
