//! Command-line front end: config loading, experiment dispatch and output files.
//!
//! Config files are TOML. System parameters sit at the top level, with
//! optional `[sweep]` and `[solver]` tables. Quantities may carry a unit
//! string (`"30 dBm"`, `"5.8 dB"`, `"-60 deg"`); bare numbers are SI
//! (watts, degrees). Every unit conversion is listed in the run manifest.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::channel::ChannelRecord;
use crate::error::{Error, Result};
use crate::experiments::{
    angle_grid, beampattern_experiment, convergence_trace, pareto_sweep, solve_scheme, trial_options, trial_scenario,
    Axis, Scheme, SweepSpec, SweepTable,
};
use crate::model::{fbl_rate, rbe, shannon_rate, sinr, PrecoderRecord, SystemConfig};
use crate::tlbs::{check_point, Architecture, ParetoPoint, RateModel, SolveOptions};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "ISAC_PARETO_THREADS";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub tol_bcd: f64,
    /// Nats.
    pub tol_rate: f64,
    pub max_bcd: usize,
    /// Upper end of the initial rate bracket, nats; `None` uses the single-user bound.
    pub rate_upper: Option<f64>,
    /// Fixed rate of the convergence experiment, bps/Hz.
    pub converge_rate_bps_hz: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        let o = SolveOptions::default();
        SolverSettings {
            tol_bcd: o.tol_bcd,
            tol_rate: o.tol_rate,
            max_bcd: o.max_bcd,
            rate_upper: None,
            converge_rate_bps_hz: 10.0,
        }
    }
}

impl SolverSettings {
    pub fn options(&self, seed: u64) -> Result<SolveOptions> {
        let o = SolveOptions {
            tol_bcd: self.tol_bcd,
            tol_rate: self.tol_rate,
            max_bcd: self.max_bcd,
            rate_upper_init: self.rate_upper,
            seed,
            ..SolveOptions::default()
        };
        o.validate()?;
        Ok(o)
    }
}

/// Everything a config file resolves to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadedConfig {
    pub system: SystemConfig,
    pub sweep: SweepSpec,
    /// Schemes to run; the sweep's scheme is the first.
    pub schemes: Vec<Scheme>,
    /// True when the file had a `[sweep]` table with an axis.
    pub sweep_given: bool,
    pub solver: SolverSettings,
    pub seed: u64,
    /// Unit conversions applied at load, e.g. `p_max: 30 dBm -> 1 W`.
    pub conversions: Vec<String>,
}

pub fn default_sweep() -> SweepSpec {
    SweepSpec {
        axis: Axis::EMax,
        grid: vec![0.15, 0.45],
        trials: 100,
        scheme: Scheme::TlbsEpmo,
    }
}

fn cfg_err(key: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("field `{key}`: {msg}"))
}

fn as_f64(v: &Value, key: &str) -> Result<f64> {
    match v {
        Value::Float(x) => Ok(*x),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(cfg_err(key, format!("expected a number, got {v}"))),
    }
}

fn as_usize(v: &Value, key: &str) -> Result<usize> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as usize),
        _ => Err(cfg_err(key, format!("expected a nonnegative integer, got {v}"))),
    }
}

/// Splits `"30 dBm"` into `(30, "dBm")`; a bare number has an empty unit.
fn split_unit(s: &str) -> Option<(f64, String)> {
    let t = s.trim();
    let end = t
        .char_indices()
        .rev()
        .find(|(_, c)| c.is_ascii_digit() || *c == '.')
        .map(|(i, c)| i + c.len_utf8())?;
    let (num, unit) = t.split_at(end);
    let x: f64 = num.trim().parse().ok()?;
    Some((x, unit.trim().to_string()))
}

/// A number with an optional unit: bare numbers and strings both accepted.
fn quantity(v: &Value, key: &str) -> Result<(f64, String)> {
    match v {
        Value::String(s) => split_unit(s).ok_or_else(|| cfg_err(key, format!("cannot read `{s}` as a quantity"))),
        _ => Ok((as_f64(v, key)?, String::new())),
    }
}

fn power_watts(x: f64, unit: &str, key: &str) -> Result<f64> {
    match unit {
        "" | "W" => Ok(x),
        "mW" => Ok(x * 1e-3),
        "dBm" => Ok(10f64.powf((x - 30.0) / 10.0)),
        "dBW" => Ok(10f64.powf(x / 10.0)),
        _ => Err(cfg_err(key, format!("unknown power unit `{unit}`"))),
    }
}

struct Loader {
    conversions: Vec<String>,
}

impl Loader {
    fn note(&mut self, key: &str, x: f64, unit: &str, to: f64, to_unit: &str) {
        if !unit.is_empty() && unit != to_unit {
            self.conversions.push(format!("{key}: {x} {unit} -> {to:e} {to_unit}"));
        }
    }

    fn power(&mut self, v: &Value, key: &str) -> Result<f64> {
        let (x, unit) = quantity(v, key)?;
        let w = power_watts(x, &unit, key)?;
        self.note(key, x, &unit, w, "W");
        Ok(w)
    }

    fn angle(&mut self, v: &Value, key: &str) -> Result<f64> {
        let (x, unit) = quantity(v, key)?;
        match unit.as_str() {
            "" | "deg" => Ok(x),
            "rad" => {
                let d = x.to_degrees();
                self.note(key, x, &unit, d, "deg");
                Ok(d)
            }
            _ => Err(cfg_err(key, format!("unknown angle unit `{unit}`"))),
        }
    }

    fn decibels(&mut self, v: &Value, key: &str) -> Result<f64> {
        let (x, unit) = quantity(v, key)?;
        match unit.as_str() {
            "" | "dB" => Ok(x),
            _ => Err(cfg_err(key, format!("expected dB, got `{unit}`"))),
        }
    }

    fn list(&mut self, v: &Value, key: &str, f: fn(&mut Self, &Value, &str) -> Result<f64>) -> Result<Vec<f64>> {
        match v {
            Value::Array(a) => a.iter().map(|x| f(self, x, key)).collect(),
            _ => Err(cfg_err(key, "expected an array")),
        }
    }

    fn plain(&mut self, v: &Value, key: &str) -> Result<f64> {
        as_f64(v, key)
    }
}

const SYSTEM_KEYS: [&str; 19] = [
    "n_tx",
    "n_rf",
    "n_cu",
    "n_tar",
    "p_max",
    "noise",
    "frame_budget",
    "eps",
    "eta",
    "target_angles",
    "cu_angles",
    "cu_distances",
    "e_max",
    "n_clusters",
    "n_rays",
    "angular_spread_deg",
    "shadowing_db",
    "beam_spread_deg",
    "seed",
];

/// Parses config text. Missing fields take the defaults of [`SystemConfig`].
pub fn parse_config(text: &str) -> Result<LoadedConfig> {
    let table: Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    let mut ld = Loader {
        conversions: Vec::new(),
    };
    let mut sys = SystemConfig::default();
    let mut seed = 0;
    let mut eps: Option<Vec<f64>> = None;
    let mut eta: Option<Vec<f64>> = None;
    let mut sweep_table = None;
    let mut solver_table = None;

    for (key, v) in &table {
        let k = key.as_str();
        match k {
            "sweep" => sweep_table = Some(v.as_table().ok_or_else(|| cfg_err(k, "expected a table"))?),
            "solver" => solver_table = Some(v.as_table().ok_or_else(|| cfg_err(k, "expected a table"))?),
            "n_tx" => sys.n_tx = as_usize(v, k)?,
            "n_rf" => sys.n_rf = as_usize(v, k)?,
            "n_cu" => sys.n_cu = as_usize(v, k)?,
            "n_tar" => sys.n_tar = as_usize(v, k)?,
            "frame_budget" => sys.frame_budget = as_usize(v, k)?,
            "n_clusters" => sys.n_clusters = as_usize(v, k)?,
            "n_rays" => sys.n_rays = as_usize(v, k)?,
            "seed" => seed = as_usize(v, k)? as u64,
            "p_max" => sys.p_max = ld.power(v, k)?,
            "noise" => sys.noise = ld.power(v, k)?,
            "eps" => {
                eps = Some(match v {
                    Value::Array(_) => ld.list(v, k, Loader::plain)?,
                    _ => vec![as_f64(v, k)?],
                })
            }
            "eta" => eta = Some(ld.list(v, k, Loader::plain)?),
            "target_angles" => sys.target_angles = ld.list(v, k, Loader::angle)?,
            "cu_angles" => sys.cu_angles = Some(ld.list(v, k, Loader::angle)?),
            "cu_distances" => sys.cu_distances = Some(ld.list(v, k, Loader::plain)?),
            "e_max" => {
                sys.e_max = match v {
                    Value::String(s) if matches!(s.trim(), "inf" | "none" | "unbounded") => None,
                    _ => Some(as_f64(v, k)?),
                }
            }
            "angular_spread_deg" => sys.angular_spread_deg = ld.angle(v, k)?,
            "shadowing_db" => sys.shadowing_db = ld.decibels(v, k)?,
            "beam_spread_deg" => sys.beam_spread_deg = ld.angle(v, k)?,
            _ => {
                return Err(Error::Config(format!(
                    "unknown field `{k}` (expected one of {}, [sweep], [solver])",
                    SYSTEM_KEYS.join(", ")
                )))
            }
        }
    }
    let m = sys.n_cu;
    sys.eps = match eps {
        Some(e) if e.len() == 1 => vec![e[0]; m],
        Some(e) => e,
        None => vec![1e-5; m],
    };
    sys.eta = eta.unwrap_or_else(|| vec![1.0 / m.max(1) as f64; m]);
    sys.validate()?;

    let mut sweep = default_sweep();
    let mut schemes = vec![sweep.scheme];
    let mut sweep_given = false;
    if let Some(t) = sweep_table {
        for (key, v) in t {
            let k = format!("sweep.{key}");
            match key.as_str() {
                "axis" => {
                    let s = v.as_str().ok_or_else(|| cfg_err(&k, "expected a string"))?;
                    sweep.axis = Axis::parse(s)?;
                    sweep_given = true;
                }
                "trials" => sweep.trials = as_usize(v, &k)?,
                "scheme" => {
                    schemes = match v {
                        Value::String(s) => parse_schemes(s)?,
                        Value::Array(a) => a
                            .iter()
                            .map(|x| {
                                x.as_str()
                                    .ok_or_else(|| cfg_err(&k, "expected scheme names"))
                                    .and_then(Scheme::parse)
                            })
                            .collect::<Result<Vec<_>>>()?,
                        _ => return Err(cfg_err(&k, "expected a string or array")),
                    };
                }
                "grid" => {}
                _ => {
                    return Err(Error::Config(format!(
                        "unknown field `{k}` (axis, grid, trials, scheme)"
                    )))
                }
            }
        }
        if let Some(g) = t.get("grid") {
            sweep.grid = match g {
                Value::String(s) => parse_grid(s, sweep.axis)?,
                Value::Array(a) => a
                    .iter()
                    .map(|x| match x {
                        Value::String(s) => {
                            let (v, unit) =
                                split_unit(s).ok_or_else(|| cfg_err("sweep.grid", format!("bad value `{s}`")))?;
                            axis_value(sweep.axis, v, &unit)
                        }
                        _ => as_f64(x, "sweep.grid"),
                    })
                    .collect::<Result<Vec<_>>>()?,
                _ => return Err(cfg_err("sweep.grid", "expected a string or array")),
            };
        } else if sweep_given {
            sweep.grid = default_grid(sweep.axis, &sys);
        }
    }
    if schemes.is_empty() {
        return Err(cfg_err("sweep.scheme", "no scheme given"));
    }
    sweep.scheme = schemes[0];
    sweep.validate()?;

    let mut solver = SolverSettings::default();
    if let Some(t) = solver_table {
        for (key, v) in t {
            let k = format!("solver.{key}");
            match key.as_str() {
                "tol_bcd" => solver.tol_bcd = as_f64(v, &k)?,
                "tol_rate" => solver.tol_rate = as_f64(v, &k)?,
                "max_bcd" => solver.max_bcd = as_usize(v, &k)?,
                "rate_upper" => solver.rate_upper = Some(as_f64(v, &k)?),
                "converge_rate_bps_hz" => solver.converge_rate_bps_hz = as_f64(v, &k)?,
                _ => {
                    return Err(Error::Config(format!(
                        "unknown field `{k}` (tol_bcd, tol_rate, max_bcd, rate_upper, converge_rate_bps_hz)"
                    )))
                }
            }
        }
    }
    solver.options(seed)?;

    Ok(LoadedConfig {
        system: sys,
        sweep,
        schemes,
        sweep_given,
        solver,
        seed,
        conversions: ld.conversions,
    })
}

pub fn load_config(path: &Path) -> Result<LoadedConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Serializes a resolved config in SI units; [`parse_config`] reads it back unchanged.
pub fn write_config(c: &LoadedConfig) -> Result<String> {
    let s = &c.system;
    let mut t = Table::new();
    let f = |x: f64| Value::Float(x);
    let fl = |v: &[f64]| Value::Array(v.iter().map(|&x| Value::Float(x)).collect());
    let int = |x: usize| Value::Integer(x as i64);
    t.insert("seed".into(), int(c.seed as usize));
    t.insert("n_tx".into(), int(s.n_tx));
    t.insert("n_rf".into(), int(s.n_rf));
    t.insert("n_cu".into(), int(s.n_cu));
    t.insert("n_tar".into(), int(s.n_tar));
    t.insert("p_max".into(), f(s.p_max));
    t.insert("noise".into(), f(s.noise));
    t.insert("frame_budget".into(), int(s.frame_budget));
    t.insert("eps".into(), fl(&s.eps));
    t.insert("eta".into(), fl(&s.eta));
    t.insert("target_angles".into(), fl(&s.target_angles));
    if let Some(a) = &s.cu_angles {
        t.insert("cu_angles".into(), fl(a));
    }
    if let Some(d) = &s.cu_distances {
        t.insert("cu_distances".into(), fl(d));
    }
    t.insert(
        "e_max".into(),
        match s.e_max {
            Some(e) => f(e),
            None => Value::String("inf".into()),
        },
    );
    t.insert("n_clusters".into(), int(s.n_clusters));
    t.insert("n_rays".into(), int(s.n_rays));
    t.insert("angular_spread_deg".into(), f(s.angular_spread_deg));
    t.insert("shadowing_db".into(), f(s.shadowing_db));
    t.insert("beam_spread_deg".into(), f(s.beam_spread_deg));

    let mut sw = Table::new();
    if c.sweep_given {
        sw.insert("axis".into(), Value::String(c.sweep.axis.name().into()));
        sw.insert("grid".into(), fl(&c.sweep.grid));
    }
    sw.insert("trials".into(), int(c.sweep.trials));
    sw.insert(
        "scheme".into(),
        Value::Array(c.schemes.iter().map(|x| Value::String(x.name().into())).collect()),
    );
    t.insert("sweep".into(), Value::Table(sw));

    let mut so = Table::new();
    so.insert("tol_bcd".into(), f(c.solver.tol_bcd));
    so.insert("tol_rate".into(), f(c.solver.tol_rate));
    so.insert("max_bcd".into(), int(c.solver.max_bcd));
    if let Some(r) = c.solver.rate_upper {
        so.insert("rate_upper".into(), f(r));
    }
    so.insert("converge_rate_bps_hz".into(), f(c.solver.converge_rate_bps_hz));
    t.insert("solver".into(), Value::Table(so));
    toml::to_string(&t).map_err(|e| Error::Config(e.to_string()))
}

pub fn parse_schemes(s: &str) -> Result<Vec<Scheme>> {
    s.split(',').map(|x| Scheme::parse(x.trim())).collect()
}

/// Converts a grid value with its unit into the axis's SI unit.
fn axis_value(axis: Axis, x: f64, unit: &str) -> Result<f64> {
    match axis {
        Axis::PMax => power_watts(x, unit, "grid"),
        _ if unit.is_empty() => Ok(x),
        _ => Err(Error::Config(format!(
            "axis {} takes no unit, got `{unit}`",
            axis.name()
        ))),
    }
}

/// Parses `start:step:stop[unit]` (inclusive) or a comma list, each value in
/// the axis's unit (`dBm`, `mW` or `W` for `p_max`).
pub fn parse_grid(s: &str, axis: Axis) -> Result<Vec<f64>> {
    let bad = |msg: &str| Error::Config(format!("grid `{s}`: {msg}"));
    let t = s.trim();
    if t.contains(':') {
        let (body, unit) = match split_unit(t.rsplit(':').next().unwrap_or("")) {
            Some((_, u)) => (t.trim_end_matches(u.as_str()).trim(), u),
            None => return Err(bad("cannot read the stop value")),
        };
        let parts: Vec<f64> = body
            .split(':')
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad("expected start:step:stop")))
            .collect::<Result<_>>()?;
        let [start, step, stop] = parts[..] else {
            return Err(bad("expected start:step:stop"));
        };
        if !(step > 0.0) || !(stop >= start) {
            return Err(bad("need step > 0 and stop >= start"));
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize;
        if n > 100_000 {
            return Err(bad("too many points"));
        }
        (0..=n)
            .map(|i| axis_value(axis, start + i as f64 * step, &unit))
            .collect()
    } else {
        t.split(',')
            .map(|p| {
                let (x, unit) = split_unit(p).ok_or_else(|| bad("cannot read a value"))?;
                axis_value(axis, x, &unit)
            })
            .collect()
    }
}

/// Grid used when a sweep names an axis without values.
pub fn default_grid(axis: Axis, sys: &SystemConfig) -> Vec<f64> {
    let dbm = |x: f64| 10f64.powf((x - 30.0) / 10.0);
    match axis {
        Axis::EMax => vec![0.15, 0.45],
        Axis::FrameBudget => vec![128.0, 256.0],
        Axis::Eps => vec![1e-6, 1e-5],
        Axis::NRf => vec![sys.n_cu.max(4) as f64, sys.n_cu.max(6) as f64],
        Axis::Eta => vec![0.3, 0.4, 0.5, 0.6, 0.7],
        Axis::PMax => (0..8).map(|i| dbm(20.0 + 2.0 * i as f64)).collect(),
    }
}

/// Twelve significant digits.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{x:.11e}")
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub subcommand: String,
    pub seed: u64,
    pub schemes: Vec<Scheme>,
    pub out_dir: String,
    pub config: SystemConfig,
    pub sweep: SweepSpec,
    pub solver: SolverSettings,
    pub conversions: Vec<String>,
}

/// A solved point with everything needed to re-check it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PointFile {
    pub config: SystemConfig,
    pub scheme: Scheme,
    pub seed: u64,
    pub trial: usize,
    pub channel: ChannelRecord,
    pub rate: f64,
    pub rbe: f64,
    pub beta: Vec<usize>,
    pub feasible: bool,
    pub precoder: PrecoderRecord,
}

#[derive(Parser, Debug)]
#[command(
    name = "pareto-isac",
    version,
    about = "RBE-rate Pareto points for hybrid ISAC beamforming"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Pareto sweep (default axis e_max).
    Pareto(Common),
    /// RBE per inner iteration at a fixed rate, plus the outer bisection trace.
    Converge(Common),
    /// Sum-rate sweep (default axis p_max).
    Sumrate(Common),
    /// Peak-normalized beampattern of solved points.
    Beampattern(Common),
    /// Re-check a solved point file, or solve one and check it.
    Validate {
        #[command(flatten)]
        common: Common,
        /// Point file written by an earlier `validate` run.
        point: Option<PathBuf>,
    },
}

#[derive(Args, Debug, Clone)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Comma-separated: tlbs_bmm, tlbs_epmo, tlbs_fdb, ibl_fdb.
    #[arg(long)]
    scheme: Option<String>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long)]
    axis: Option<String>,
    /// `start:step:stop[unit]` or a comma list, e.g. `20:2:34dBm`.
    #[arg(long)]
    grid: Option<String>,
}

/// Resolved inputs of one run.
struct Run {
    sub: &'static str,
    cfg: LoadedConfig,
    out: PathBuf,
}

fn resolve(sub: &'static str, c: &Common) -> Result<Run> {
    let mut cfg = match &c.config {
        Some(p) => load_config(p)?,
        None => parse_config("")?,
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(s) = &c.scheme {
        cfg.schemes = parse_schemes(s)?;
        cfg.sweep.scheme = cfg.schemes[0];
    }
    if sub == "sumrate" && !cfg.sweep_given && c.axis.is_none() {
        cfg.sweep.axis = Axis::PMax;
        cfg.sweep.grid = default_grid(Axis::PMax, &cfg.system);
    }
    if let Some(a) = &c.axis {
        cfg.sweep.axis = Axis::parse(a)?;
        if c.grid.is_none() {
            cfg.sweep.grid = default_grid(cfg.sweep.axis, &cfg.system);
        }
    }
    if let Some(g) = &c.grid {
        cfg.sweep.grid = parse_grid(g, cfg.sweep.axis)?;
    }
    match c.trials {
        Some(t) => cfg.sweep.trials = t,
        // One realization is the natural unit for traces, patterns and checks.
        None if matches!(sub, "converge" | "beampattern" | "validate") => cfg.sweep.trials = 1,
        None => {}
    }
    cfg.sweep.validate()?;
    Ok(Run {
        sub,
        cfg,
        out: c.out_dir.clone(),
    })
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))
}

fn write_manifest(run: &Run) -> Result<()> {
    fs::create_dir_all(&run.out).map_err(|e| Error::Config(format!("cannot create {}: {e}", run.out.display())))?;
    let m = RunManifest {
        version: VERSION.into(),
        subcommand: run.sub.into(),
        seed: run.cfg.seed,
        schemes: run.cfg.schemes.clone(),
        out_dir: run.out.display().to_string(),
        config: run.cfg.system.clone(),
        sweep: run.cfg.sweep.clone(),
        solver: run.cfg.solver.clone(),
        conversions: run.cfg.conversions.clone(),
    };
    write_file(
        &run.out.join("manifest.json"),
        &(serde_json::to_string_pretty(&m)? + "\n"),
    )
}

fn write_table(run: &Run, name: &str, header: &[&str], body: &str) -> Result<()> {
    write_file(&run.out.join(format!("{name}.csv")), &(header.join(",") + "\n" + body))?;
    #[derive(Serialize)]
    struct Sidecar<'a> {
        table: &'a str,
        columns: &'a [&'a str],
        seed: u64,
        schemes: &'a [Scheme],
        config: &'a SystemConfig,
        sweep: &'a SweepSpec,
        solver: &'a SolverSettings,
    }
    let s = Sidecar {
        table: name,
        columns: header,
        seed: run.cfg.seed,
        schemes: &run.cfg.schemes,
        config: &run.cfg.system,
        sweep: &run.cfg.sweep,
        solver: &run.cfg.solver,
    };
    write_file(
        &run.out.join(format!("{name}.json")),
        &(serde_json::to_string_pretty(&s)? + "\n"),
    )
}

const SWEEP_COLUMNS: [&str; 9] = [
    "scheme",
    "axis",
    "value",
    "trials",
    "feasible",
    "infeasible",
    "mean_rbe",
    "mean_rate_nats",
    "mean_rate_bps_hz",
];

const TRIAL_COLUMNS: [&str; 10] = [
    "scheme",
    "value",
    "trial",
    "feasible",
    "rbe",
    "rate_nats",
    "rate_bps_hz",
    "beta",
    "outer_iterations",
    "max_bcd_iterations",
];

fn sweep_command(run: &Run, opts: &SolveOptions) -> Result<i32> {
    let mut rows = String::new();
    let mut trials = String::new();
    let mut any = false;
    for &scheme in &run.cfg.schemes {
        let spec = SweepSpec {
            scheme,
            ..run.cfg.sweep.clone()
        };
        let t: SweepTable = pareto_sweep(&run.cfg.system, &spec, opts)?;
        any |= t.any_feasible();
        for r in &t.rows {
            let _ = writeln!(
                rows,
                "{},{},{},{},{},{},{},{},{}",
                scheme.name(),
                spec.axis.name(),
                fmt_f64(r.value),
                r.trials,
                r.feasible,
                r.infeasible(),
                fmt_f64(r.mean_rbe),
                fmt_f64(r.mean_rate),
                fmt_f64(r.mean_rate_bits())
            );
        }
        for r in &t.records {
            let beta: Vec<String> = r.beta.iter().map(|b| b.to_string()).collect();
            let _ = writeln!(
                trials,
                "{},{},{},{},{},{},{},{},{},{}",
                scheme.name(),
                fmt_f64(r.value),
                r.trial,
                u8::from(r.feasible),
                fmt_f64(r.rbe),
                fmt_f64(r.rate),
                fmt_f64(r.rate / std::f64::consts::LN_2),
                beta.join(";"),
                r.outer_iterations,
                r.max_bcd_iterations
            );
        }
    }
    write_table(run, run.sub, &SWEEP_COLUMNS, &rows)?;
    write_table(run, &format!("{}_trials", run.sub), &TRIAL_COLUMNS, &trials)?;
    Ok(if any { EXIT_OK } else { EXIT_INFEASIBLE })
}

fn par_trials<T: Send>(n: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

fn converge_command(run: &Run, opts: &SolveOptions) -> Result<i32> {
    let sys = &run.cfg.system;
    let rate = run.cfg.solver.converge_rate_bps_hz * std::f64::consts::LN_2;
    let mut inner = String::new();
    let mut outer = String::new();
    for &scheme in &run.cfg.schemes {
        let traces = par_trials(run.cfg.sweep.trials, |t| {
            let (ch, rs) = trial_scenario(sys, opts.seed, t)?;
            convergence_trace(sys, &ch, &rs, scheme, rate, &trial_options(opts, scheme, t))
        })?;
        for (t, tr) in traces.iter().enumerate() {
            for (i, e) in tr.inner.iter().enumerate() {
                let _ = writeln!(
                    inner,
                    "{},{},{},{},{}",
                    scheme.name(),
                    t,
                    i,
                    fmt_f64(*e),
                    u8::from(tr.inner_feasible)
                );
            }
            for r in &tr.outer {
                let _ = writeln!(
                    outer,
                    "{},{},{},{},{},{},{},{}",
                    scheme.name(),
                    t,
                    r.iteration,
                    fmt_f64(r.rate),
                    fmt_f64(r.rate / std::f64::consts::LN_2),
                    fmt_f64(r.rbe),
                    r.bcd_iterations,
                    u8::from(r.feasible)
                );
            }
        }
    }
    write_table(
        run,
        "converge_inner",
        &["scheme", "trial", "iteration", "rbe", "feasible"],
        &inner,
    )?;
    write_table(
        run,
        "converge_outer",
        &[
            "scheme",
            "trial",
            "iteration",
            "rate_nats",
            "rate_bps_hz",
            "rbe",
            "bcd_iterations",
            "feasible",
        ],
        &outer,
    )?;
    Ok(EXIT_OK)
}

fn beampattern_command(run: &Run, opts: &SolveOptions) -> Result<i32> {
    let sys = &run.cfg.system;
    let grid = angle_grid(0.5);
    let mut body = String::new();
    let mut any = false;
    for &scheme in &run.cfg.schemes {
        let pats = par_trials(run.cfg.sweep.trials, |t| {
            let (ch, rs) = trial_scenario(sys, opts.seed, t)?;
            let p = solve_scheme(sys, &ch, &rs, scheme, &trial_options(opts, scheme, t))?;
            Ok((p.feasible, beampattern_experiment(sys, &p, &grid)?))
        })?;
        for (t, (feasible, rows)) in pats.iter().enumerate() {
            any |= feasible;
            for r in rows {
                let _ = writeln!(
                    body,
                    "{},{},{},{},{},{}",
                    scheme.name(),
                    t,
                    u8::from(*feasible),
                    fmt_f64(r.angle),
                    fmt_f64(r.gain_db),
                    fmt_f64(r.mask)
                );
            }
        }
    }
    write_table(
        run,
        "beampattern",
        &["scheme", "trial", "feasible", "angle_deg", "gain_db", "mask"],
        &body,
    )?;
    Ok(if any { EXIT_OK } else { EXIT_INFEASIBLE })
}

/// Named checks of a point against the model evaluators.
pub fn point_checks(pf: &PointFile) -> Result<Vec<(String, bool, String)>> {
    let cfg = &pf.config;
    cfg.validate()?;
    let ch = pf.channel.clone().into_channel_set()?;
    let pc = pf.precoder.to_precoder()?;
    let rs = crate::model::ideal_radar_precoder(&cfg.target_angles, &cfg.geometry())?;
    let arch = pf.scheme.architecture();
    let model = pf.scheme.rate_model();
    let mut out = Vec::new();
    let mut push = |name: &str, ok: bool, detail: String| out.push((name.to_string(), ok, detail));
    push("feasible_flag", pf.feasible, String::new());
    if let Architecture::Hybrid(_) = arch {
        let e = pc.modulus_error();
        push("unit_modulus", e <= 1e-10, fmt_f64(e));
    }
    let e = pc.orthonormality_error();
    push("orthonormal_u", e <= 1e-10, fmt_f64(e));
    let p = pc.power();
    push("power", p <= cfg.p_max + 1e-8, fmt_f64(p));
    let r = rbe(&pc, &rs);
    push("rbe_bound", r <= cfg.e_max_value() + 1e-8, fmt_f64(r));
    push("rbe_reported", (r - pf.rbe).abs() <= 1e-9 * r.max(1.0), fmt_f64(pf.rbe));
    let total: usize = pf.beta.iter().sum();
    push(
        "blocklengths",
        pf.beta.len() == cfg.n_cu && total == cfg.frame_budget,
        total.to_string(),
    );
    let g = sinr(&ch, &pc, cfg.noise);
    for m in 0..cfg.n_cu.min(g.len()) {
        let rate = match model {
            RateModel::FiniteBlocklength => {
                fbl_rate(g[m], pf.beta.get(m).copied().unwrap_or(0) as f64, cfg.eps[m]).unwrap_or(f64::NEG_INFINITY)
            }
            RateModel::Shannon => shannon_rate(g[m]),
        };
        push(
            &format!("rate_user_{m}"),
            rate >= cfg.eta[m] * pf.rate - 1e-6,
            fmt_f64(rate),
        );
    }
    let point = ParetoPoint {
        rbe: pf.rbe,
        rate: pf.rate,
        precoder: pc,
        beta: pf.beta.clone(),
        sinr: g,
        outer_trace: Vec::new(),
        inner_traces: Vec::new(),
        rate_bracket: (pf.rate, pf.rate),
        feasible: pf.feasible,
    };
    let all = check_point(cfg, &ch, &rs, &point, arch, model);
    push(
        "check_point",
        all.is_ok(),
        all.err().map(|e| e.to_string()).unwrap_or_default(),
    );
    Ok(out)
}

fn validate_command(run: &Run, opts: &SolveOptions, point: Option<&Path>) -> Result<i32> {
    let pf = match point {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str::<PointFile>(&text)?
        }
        None => {
            let sys = &run.cfg.system;
            let scheme = run.cfg.sweep.scheme;
            let (ch, rs) = trial_scenario(sys, opts.seed, 0)?;
            let p = solve_scheme(sys, &ch, &rs, scheme, &trial_options(opts, scheme, 0))?;
            let pf = PointFile {
                config: sys.clone(),
                scheme,
                seed: opts.seed,
                trial: 0,
                channel: ChannelRecord::from(&ch),
                rate: p.rate,
                rbe: p.rbe,
                beta: p.beta.clone(),
                feasible: p.feasible,
                precoder: PrecoderRecord::from(&p.precoder),
            };
            write_file(
                &run.out.join("point.json"),
                &(serde_json::to_string_pretty(&pf)? + "\n"),
            )?;
            pf
        }
    };
    let checks = point_checks(&pf)?;
    let mut body = String::new();
    for (name, ok, detail) in &checks {
        let _ = writeln!(body, "{name},{},{detail}", if *ok { "pass" } else { "fail" });
    }
    write_table(run, "validate", &["check", "status", "value"], &body)?;
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0.as_str()).collect();
    if failed.is_empty() {
        Ok(EXIT_OK)
    } else {
        eprintln!("validation failed: {}", failed.join(", "));
        Ok(EXIT_ERROR)
    }
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Error::Config(e.to_string()))
}

fn dispatch(cmd: Command) -> Result<i32> {
    let (sub, common, point) = match cmd {
        Command::Pareto(c) => ("pareto", c, None),
        Command::Converge(c) => ("converge", c, None),
        Command::Sumrate(c) => ("sumrate", c, None),
        Command::Beampattern(c) => ("beampattern", c, None),
        Command::Validate { common, point } => ("validate", common, point),
    };
    let run = resolve(sub, &common)?;
    let opts = run.cfg.solver.options(run.cfg.seed)?;
    let pool = thread_pool()?;
    write_manifest(&run)?;
    pool.install(|| match sub {
        "pareto" | "sumrate" => sweep_command(&run, &opts),
        "converge" => converge_command(&run, &opts),
        "beampattern" => beampattern_command(&run, &opts),
        _ => validate_command(&run, &opts, point.as_deref()),
    })
}

/// Runs the command line `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}
