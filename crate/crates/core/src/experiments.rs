//! Monte-Carlo experiment drivers: Pareto and sum-rate sweeps, convergence
//! traces, beampatterns and the fully digital baselines.
//!
//! Trial `t` draws its channels from stream `2t` of the master seed and its
//! initial precoder from stream `2t + 1`, so every scheme and grid value sees
//! the same channels. Trials run in parallel on the current rayon pool and are
//! reduced in trial order, which keeps every output independent of the number
//! of worker threads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{generate_channels, ChannelSet};
use crate::error::{Error, Result};
use crate::model::{beampattern, desired_beampattern, ideal_radar_precoder, rbe, sinr, RadarSpec, SystemConfig};
use crate::numerics::Rng;
use crate::tlbs::{
    check_point, equal_split, init_digital, init_precoder, inner_bcd_with, sinr_thresholds, solve_point, Architecture,
    OuterRow, ParetoPoint, RateModel, RfMethod, SolveOptions,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    EMax,
    FrameBudget,
    Eps,
    NRf,
    Eta,
    PMax,
}

impl Axis {
    pub const ALL: [Axis; 6] = [
        Axis::EMax,
        Axis::FrameBudget,
        Axis::Eps,
        Axis::NRf,
        Axis::Eta,
        Axis::PMax,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Axis::EMax => "e_max",
            Axis::FrameBudget => "frame_budget",
            Axis::Eps => "eps",
            Axis::NRf => "n_rf",
            Axis::Eta => "eta",
            Axis::PMax => "p_max",
        }
    }

    pub fn parse(s: &str) -> Result<Axis> {
        Axis::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown axis `{s}`")))
    }

    /// Copy of `cfg` with this axis set to `value`.
    ///
    /// `eta` sets the first user's share and splits the rest equally;
    /// `eps` applies to every user; `p_max` is in watts.
    pub fn apply(self, cfg: &SystemConfig, value: f64) -> Result<SystemConfig> {
        let mut c = cfg.clone();
        let integer = |v: f64| -> Result<usize> {
            if v >= 1.0 && v.fract() == 0.0 && v < 1e9 {
                Ok(v as usize)
            } else {
                Err(Error::Config(format!(
                    "{} needs a positive integer, got {v}",
                    self.name()
                )))
            }
        };
        match self {
            Axis::EMax => c.e_max = (value < f64::INFINITY).then_some(value),
            Axis::FrameBudget => c.frame_budget = integer(value)?,
            Axis::Eps => c.eps = vec![value; c.n_cu],
            Axis::NRf => c.n_rf = integer(value)?,
            Axis::Eta => {
                let m = c.n_cu;
                c.eta = if m == 1 {
                    vec![value]
                } else {
                    let rest = (1.0 - value) / (m - 1) as f64;
                    (0..m).map(|i| if i == 0 { value } else { rest }).collect()
                };
            }
            Axis::PMax => c.p_max = value,
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    TlbsBmm,
    TlbsEpmo,
    TlbsFdb,
    IblFdb,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::TlbsBmm, Scheme::TlbsEpmo, Scheme::TlbsFdb, Scheme::IblFdb];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::TlbsBmm => "tlbs_bmm",
            Scheme::TlbsEpmo => "tlbs_epmo",
            Scheme::TlbsFdb => "tlbs_fdb",
            Scheme::IblFdb => "ibl_fdb",
        }
    }

    pub fn parse(s: &str) -> Result<Scheme> {
        let key = s.to_ascii_lowercase().replace('-', "_");
        Scheme::ALL
            .into_iter()
            .find(|x| x.name() == key)
            .ok_or_else(|| Error::Config(format!("unknown scheme `{s}`")))
    }

    pub fn architecture(self) -> Architecture {
        match self {
            Scheme::TlbsBmm => Architecture::Hybrid(RfMethod::Bmm),
            Scheme::TlbsEpmo => Architecture::Hybrid(RfMethod::Epmo),
            Scheme::TlbsFdb | Scheme::IblFdb => Architecture::FullyDigital,
        }
    }

    pub fn rate_model(self) -> RateModel {
        match self {
            Scheme::IblFdb => RateModel::Shannon,
            _ => RateModel::FiniteBlocklength,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub axis: Axis,
    pub grid: Vec<f64>,
    pub trials: usize,
    pub scheme: Scheme,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::Config("sweep grid is empty".into()));
        }
        if self.grid.iter().any(|v| v.is_nan()) {
            return Err(Error::Config("sweep grid contains NaN".into()));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        Ok(())
    }
}

pub fn channel_stream(trial: usize) -> u64 {
    2 * trial as u64
}

pub fn init_stream(trial: usize) -> u64 {
    2 * trial as u64 + 1
}

/// Channels and radar precoder of one trial.
pub fn trial_scenario(cfg: &SystemConfig, seed: u64, trial: usize) -> Result<(ChannelSet, RadarSpec)> {
    let mut rng = Rng::new(seed, channel_stream(trial));
    let ch = generate_channels(cfg, &mut rng)?;
    let rs = ideal_radar_precoder(&cfg.target_angles, &cfg.geometry())?;
    Ok((ch, rs))
}

/// Solver options of one trial: the scheme's RF method and the trial's init stream.
pub fn trial_options(base: &SolveOptions, scheme: Scheme, trial: usize) -> SolveOptions {
    let mut o = base.clone();
    if let Architecture::Hybrid(m) = scheme.architecture() {
        o.rf_method = m;
    }
    o.stream = init_stream(trial);
    o
}

/// One of the two fully digital reference schemes.
pub fn baseline_solve(
    cfg: &SystemConfig,
    ch: &ChannelSet,
    rs: &RadarSpec,
    mode: Scheme,
    opts: &SolveOptions,
) -> Result<ParetoPoint> {
    match mode {
        Scheme::TlbsFdb | Scheme::IblFdb => solve_point(cfg, ch, rs, mode.architecture(), mode.rate_model(), opts),
        _ => Err(Error::Config(format!("{} is not a baseline", mode.name()))),
    }
}

pub fn solve_scheme(
    cfg: &SystemConfig,
    ch: &ChannelSet,
    rs: &RadarSpec,
    scheme: Scheme,
    opts: &SolveOptions,
) -> Result<ParetoPoint> {
    solve_point(cfg, ch, rs, scheme.architecture(), scheme.rate_model(), opts)
}

/// Result of one trial at one grid value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub value: f64,
    pub trial: usize,
    pub feasible: bool,
    pub rbe: f64,
    /// Nats.
    pub rate: f64,
    pub beta: Vec<usize>,
    pub outer_iterations: usize,
    pub max_bcd_iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub trials: usize,
    pub feasible: usize,
    /// Means over feasible trials; NaN when none is feasible.
    pub mean_rbe: f64,
    pub mean_rate: f64,
}

impl SweepRow {
    pub fn mean_rate_bits(&self) -> f64 {
        self.mean_rate / std::f64::consts::LN_2
    }

    pub fn infeasible(&self) -> usize {
        self.trials - self.feasible
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub spec: SweepSpec,
    pub rows: Vec<SweepRow>,
    pub records: Vec<TrialRecord>,
}

impl SweepTable {
    pub fn any_feasible(&self) -> bool {
        self.rows.iter().any(|r| r.feasible > 0)
    }
}

fn record_of(value: f64, trial: usize, p: &ParetoPoint) -> TrialRecord {
    TrialRecord {
        value,
        trial,
        feasible: p.feasible,
        rbe: p.rbe,
        rate: p.rate,
        beta: p.beta.clone(),
        outer_iterations: p.outer_trace.len(),
        max_bcd_iterations: p.outer_trace.iter().map(|r| r.bcd_iterations).max().unwrap_or(0),
    }
}

/// Runs `spec.scheme` over every grid value and trial. Rows follow the
/// ascending axis order; each feasible point is re-validated with the model
/// evaluators before it enters a mean.
pub fn pareto_sweep(cfg: &SystemConfig, spec: &SweepSpec, base: &SolveOptions) -> Result<SweepTable> {
    spec.validate()?;
    let mut grid = spec.grid.clone();
    grid.sort_by(f64::total_cmp);
    let cfgs = grid
        .iter()
        .map(|&v| spec.axis.apply(cfg, v))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|g| (0..spec.trials).map(move |t| (g, t)))
        .collect();
    let records = jobs
        .par_iter()
        .map(|&(g, t)| {
            let c = &cfgs[g];
            let (ch, rs) = trial_scenario(c, base.seed, t)?;
            let opts = trial_options(base, spec.scheme, t);
            let p = solve_scheme(c, &ch, &rs, spec.scheme, &opts)?;
            if p.feasible {
                check_point(c, &ch, &rs, &p, spec.scheme.architecture(), spec.scheme.rate_model())?;
            }
            Ok(record_of(grid[g], t, &p))
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = grid
        .iter()
        .enumerate()
        .map(|(g, &value)| {
            let chunk = &records[g * spec.trials..(g + 1) * spec.trials];
            let ok: Vec<&TrialRecord> = chunk.iter().filter(|r| r.feasible).collect();
            let n = ok.len();
            let mean = |f: fn(&TrialRecord) -> f64| {
                if n == 0 {
                    f64::NAN
                } else {
                    ok.iter().map(|r| f(r)).sum::<f64>() / n as f64
                }
            };
            SweepRow {
                value,
                trials: spec.trials,
                feasible: n,
                mean_rbe: mean(|r| r.rbe),
                mean_rate: mean(|r| r.rate),
            }
        })
        .collect();
    Ok(SweepTable {
        spec: SweepSpec { grid, ..spec.clone() },
        rows,
        records,
    })
}

/// The point at rate zero: every SINR constraint is dropped and only the
/// radar fit is minimized.
pub fn sensing_point(
    cfg: &SystemConfig,
    ch: &ChannelSet,
    rs: &RadarSpec,
    scheme: Scheme,
    opts: &SolveOptions,
) -> Result<ParetoPoint> {
    let init = match scheme.architecture() {
        Architecture::Hybrid(_) => init_precoder(cfg, rs, &mut Rng::new(opts.seed, opts.stream))?,
        Architecture::FullyDigital => init_digital(cfg, rs)?,
    };
    let zeros = vec![0.0; cfg.n_cu];
    let inner = inner_bcd_with(&zeros, cfg, ch, rs, &init, scheme.architecture(), opts)?;
    let feasible = inner.feasible && inner.rbe <= cfg.e_max_value();
    Ok(ParetoPoint {
        rbe: inner.rbe,
        rate: 0.0,
        sinr: sinr(ch, &inner.precoder, cfg.noise),
        precoder: inner.precoder,
        beta: equal_split(cfg.frame_budget, cfg.n_cu),
        outer_trace: Vec::new(),
        inner_traces: vec![inner.trace],
        rate_bracket: (0.0, 0.0),
        feasible,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeamRow {
    pub angle: f64,
    /// Gain relative to the peak, dB.
    pub gain_db: f64,
    pub mask: f64,
}

/// Angles from −90° to 90° in steps of `step` degrees.
pub fn angle_grid(step: f64) -> Vec<f64> {
    let n = (180.0 / step).round() as usize;
    (0..=n).map(|i| -90.0 + i as f64 * step).collect()
}

/// Lowest reported gain relative to the peak, dB.
pub const GAIN_FLOOR_DB: f64 = -300.0;

/// Peak-normalized beampattern of `point` with the desired mask on `grid`.
pub fn beampattern_experiment(cfg: &SystemConfig, point: &ParetoPoint, grid: &[f64]) -> Result<Vec<BeamRow>> {
    let g = beampattern(&point.precoder, grid, &cfg.geometry())?;
    let mask = desired_beampattern(&cfg.target_angles, cfg.beam_spread_deg, grid)?;
    let peak = g.iter().cloned().fold(0.0, f64::max);
    Ok(grid
        .iter()
        .zip(g.iter().zip(mask))
        .map(|(&angle, (&v, m))| BeamRow {
            angle,
            gain_db: if peak > 0.0 && v > 0.0 {
                (10.0 * (v / peak).log10()).max(GAIN_FLOOR_DB)
            } else {
                GAIN_FLOOR_DB
            },
            mask: m,
        })
        .collect())
}

/// Grid angle of the largest gain; the first one on ties.
pub fn peak_angle(rows: &[BeamRow]) -> Option<f64> {
    rows.iter()
        .fold(None::<&BeamRow>, |best, r| match best {
            Some(b) if b.gain_db >= r.gain_db => Some(b),
            _ => Some(r),
        })
        .map(|r| r.angle)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTrace {
    /// RBE after each block-coordinate iteration at the fixed rate, starting point first.
    pub inner: Vec<f64>,
    pub inner_feasible: bool,
    /// Outer bisection rows of the full solve.
    pub outer: Vec<OuterRow>,
}

/// Inner trace at the fixed sum rate `rate` (nats) plus the outer trace of a full solve.
pub fn convergence_trace(
    cfg: &SystemConfig,
    ch: &ChannelSet,
    rs: &RadarSpec,
    scheme: Scheme,
    rate: f64,
    opts: &SolveOptions,
) -> Result<ConvergenceTrace> {
    let arch = scheme.architecture();
    let init = match arch {
        Architecture::Hybrid(_) => init_precoder(cfg, rs, &mut Rng::new(opts.seed, opts.stream))?,
        Architecture::FullyDigital => init_digital(cfg, rs)?,
    };
    let beta = equal_split(cfg.frame_budget, cfg.n_cu);
    let gammas = sinr_thresholds(cfg, rate, &beta, scheme.rate_model())?;
    let inner = inner_bcd_with(&gammas, cfg, ch, rs, &init, arch, opts)?;
    let full = solve_scheme(cfg, ch, rs, scheme, opts)?;
    Ok(ConvergenceTrace {
        inner: inner.trace,
        inner_feasible: inner.feasible,
        outer: full.outer_trace,
    })
}

/// Fixed-rate inner run only, as used for comparing RF solvers at one rate.
pub fn fixed_rate_rbe(
    cfg: &SystemConfig,
    ch: &ChannelSet,
    rs: &RadarSpec,
    scheme: Scheme,
    rate: f64,
    opts: &SolveOptions,
) -> Result<(f64, usize, bool)> {
    let arch = scheme.architecture();
    let init = match arch {
        Architecture::Hybrid(_) => init_precoder(cfg, rs, &mut Rng::new(opts.seed, opts.stream))?,
        Architecture::FullyDigital => init_digital(cfg, rs)?,
    };
    let beta = equal_split(cfg.frame_budget, cfg.n_cu);
    let gammas = sinr_thresholds(cfg, rate, &beta, scheme.rate_model())?;
    let inner = inner_bcd_with(&gammas, cfg, ch, rs, &init, arch, opts)?;
    debug_assert!((rbe(&inner.precoder, rs) - inner.rbe).abs() <= 1e-9 * inner.rbe.max(1.0));
    Ok((inner.rbe, inner.iterations, inner.feasible))
}
