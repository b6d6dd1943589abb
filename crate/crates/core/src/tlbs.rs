//! Two-layer bisection search: block-coordinate RBE minimization at a fixed
//! sum rate, wrapped in a bisection on the rate.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bb_solver::{solve_bb_from, update_u, SocpInstance};
use crate::channel::ChannelSet;
use crate::error::{Error, Result};
use crate::fbl::{allocate_blocklengths, solve_gamma_threshold};
use crate::linalg::{frobenius_sq, CMatrix};
use crate::model::{fbl_rate, rbe, shannon_rate, sinr, HybridPrecoder, RadarSpec, SystemConfig};
use crate::numerics::Rng;
use crate::quadratics::{build_quadratics, QuadraticForms};
use crate::rf_bmm::{bmm_solve, max_scaled_violation, BmmOptions};
use crate::rf_epmo::{epmo_best_effort, PenaltyConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RfMethod {
    Bmm,
    Epmo,
}

/// Precoder structure being optimized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Architecture {
    Hybrid(RfMethod),
    /// One RF chain per antenna: `F_RF = I`, only the digital stage is designed.
    FullyDigital,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RateModel {
    FiniteBlocklength,
    /// Infinite blocklength; SINR thresholds follow the Shannon rate and no
    /// block lengths are allocated.
    Shannon,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveOptions {
    pub rf_method: RfMethod,
    /// Relative RBE change that ends the inner loop.
    pub tol_bcd: f64,
    /// Final bracket width on the sum rate, nats.
    pub tol_rate: f64,
    pub max_bcd: usize,
    pub rate_upper_init: Option<f64>,
    pub seed: u64,
    /// Stream of the initialization draw, normally the trial index.
    pub stream: u64,
    pub bmm: BmmOptions,
    pub penalty: PenaltyConfig,
    pub bb_tol: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            rf_method: RfMethod::Epmo,
            tol_bcd: 1e-4,
            tol_rate: 0.01,
            max_bcd: 50,
            rate_upper_init: None,
            seed: 0,
            stream: 0,
            bmm: BmmOptions::default(),
            penalty: PenaltyConfig::default(),
            bb_tol: 1e-8,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol_bcd > 0.0 && self.tol_rate > 0.0) {
            return Err(Error::Config("tol_bcd and tol_rate must be positive".into()));
        }
        if self.max_bcd == 0 {
            return Err(Error::Config("max_bcd must be at least 1".into()));
        }
        if let Some(r) = self.rate_upper_init {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::Config("rate_upper_init must be positive and finite".into()));
            }
        }
        self.penalty.validate()
    }
}

/// One midpoint of the outer bisection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OuterRow {
    pub iteration: usize,
    pub rate: f64,
    pub rbe: f64,
    pub bcd_iterations: usize,
    pub feasible: bool,
}

#[derive(Clone, Debug)]
pub struct ParetoPoint {
    pub rbe: f64,
    /// Sum rate in nats per channel use.
    pub rate: f64,
    pub precoder: HybridPrecoder,
    pub beta: Vec<usize>,
    pub sinr: Vec<f64>,
    pub outer_trace: Vec<OuterRow>,
    /// RBE after every BCD iteration, one list per outer iteration.
    pub inner_traces: Vec<Vec<f64>>,
    /// Bracket at termination.
    pub rate_bracket: (f64, f64),
    pub feasible: bool,
}

impl ParetoPoint {
    pub fn rate_bits(&self) -> f64 {
        self.rate / std::f64::consts::LN_2
    }
}

#[derive(Clone, Debug)]
pub struct InnerResult {
    pub precoder: HybridPrecoder,
    pub rbe: f64,
    /// RBE at the starting point followed by the value after every iteration.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub feasible: bool,
    /// Why the inner problem was declared infeasible.
    pub reason: Option<String>,
}

/// Equal split of the frame, remainder to the lowest indices.
pub fn equal_split(frame: usize, m: usize) -> Vec<usize> {
    (0..m).map(|i| frame / m + usize::from(i < frame % m)).collect()
}

/// Per-user SINR thresholds for sum rate `rate` under the given block lengths.
pub fn sinr_thresholds(cfg: &SystemConfig, rate: f64, beta: &[usize], model: RateModel) -> Result<Vec<f64>> {
    (0..cfg.n_cu)
        .map(|m| {
            let target = cfg.eta[m] * rate;
            match model {
                RateModel::Shannon => Ok(target.exp_m1()),
                RateModel::FiniteBlocklength => {
                    Ok(solve_gamma_threshold(target, beta[m] as f64, cfg.eps[m])?.gamma_min)
                }
            }
        })
        .collect()
}

/// Default upper end of the rate bracket: the sum of single-user Shannon rates at full power.
pub fn rate_upper_bound(cfg: &SystemConfig, ch: &ChannelSet) -> f64 {
    ch.h.iter()
        .map(|h| (cfg.p_max * h.norm_squared() / cfg.noise).ln_1p())
        .sum()
}

/// Number of halvings that bring a bracket of width `width` to `tol`.
pub fn bisection_steps(width: f64, tol: f64) -> usize {
    if width <= tol {
        0
    } else {
        (width / tol).log2().ceil() as usize
    }
}

fn pseudo_fit(f_rf: &CMatrix, target: &CMatrix) -> Result<CMatrix> {
    f_rf.clone()
        .svd(true, true)
        .solve(target, 1e-12)
        .map_err(|e| Error::Solver {
            msg: format!("least-squares fit failed: {e}"),
            residual: f64::NAN,
        })
}

fn scale_to_power(f_rf: &CMatrix, f_bb: &mut CMatrix, p_max: f64) {
    let p = frobenius_sq(&(f_rf * &*f_bb));
    if p > 0.0 {
        *f_bb *= Complex64::from((p_max / p).sqrt());
    }
}

/// Starting point: random RF phases and a power-scaled least-squares fit of the radar precoder.
pub fn init_precoder(cfg: &SystemConfig, rs: &RadarSpec, rng: &mut Rng) -> Result<HybridPrecoder> {
    let (n_tx, n_rf, m) = (cfg.n_tx, cfg.n_rf, cfg.n_cu);
    let n_tar = rs.f_r.ncols();
    let f_rf = CMatrix::from_fn(n_tx, n_rf, |_, _| rng.unit_phase());
    let u0 = CMatrix::from_fn(n_tar, m, |i, j| Complex64::from(f64::from(u8::from(i == j))));
    let fit0 = pseudo_fit(&f_rf, &(&rs.f_r * &u0))?;
    let u = update_u(&f_rf, &fit0, rs)?;
    let mut f_bb = pseudo_fit(&f_rf, &(&rs.f_r * &u))?;
    scale_to_power(&f_rf, &mut f_bb, cfg.p_max);
    Ok(HybridPrecoder { f_rf, f_bb, u })
}

/// Fully digital counterpart of [`init_precoder`]: `F_RF = I` and `F = F_r U`
/// scaled to the power budget.
pub fn init_digital(cfg: &SystemConfig, rs: &RadarSpec) -> Result<HybridPrecoder> {
    let n_tar = rs.f_r.ncols();
    let f_rf = CMatrix::identity(cfg.n_tx, cfg.n_tx);
    let u = CMatrix::from_fn(n_tar, cfg.n_cu, |i, j| Complex64::from(f64::from(u8::from(i == j))));
    let mut f_bb = &rs.f_r * &u;
    scale_to_power(&f_rf, &mut f_bb, cfg.p_max);
    Ok(HybridPrecoder { f_rf, f_bb, u })
}

fn meets_sinr(ch: &ChannelSet, pc: &HybridPrecoder, gammas: &[f64], noise: f64) -> bool {
    sinr(ch, pc, noise)
        .iter()
        .zip(gammas)
        .all(|(g, &t)| t <= 0.0 || *g >= t * (1.0 - 1e-9))
}

fn bb_step(
    ch: &ChannelSet,
    rs: &RadarSpec,
    cfg: &SystemConfig,
    f_rf: &CMatrix,
    pc: &HybridPrecoder,
    gammas: &[f64],
    tol: f64,
) -> Result<CMatrix> {
    let inst = SocpInstance {
        channels: ch.matrix(),
        target: &rs.f_r * &pc.u,
        rf: f_rf.clone(),
        gamma: gammas.to_vec(),
        p_max: cfg.p_max,
        noise: cfg.noise,
    };
    Ok(solve_bb_from(&inst, &pc.f_bb, tol)?.f_bb)
}

/// Relative tightenings of the thresholds and the power budget seen by the
/// penalty solver, so its residual violation lands on the feasible side. The
/// larger ones are tried only from an infeasible point.
const PENALTY_MARGINS: [f64; 3] = [1e-3, 1e-2, 5e-2];

#[allow(clippy::too_many_arguments)]
fn penalty_pass(
    ch: &ChannelSet,
    rs: &RadarSpec,
    cfg: &SystemConfig,
    pc: &HybridPrecoder,
    gammas: &[f64],
    q: &QuadraticForms,
    d: Vec<Complex64>,
    escalate: bool,
    opts: &SolveOptions,
) -> Result<Vec<Complex64>> {
    let mut d = d;
    let rounds = if escalate { PENALTY_MARGINS.len() } else { 1 };
    for &margin in &PENALTY_MARGINS[..rounds] {
        let tight: Vec<f64> = gammas.iter().map(|g| g * (1.0 + margin)).collect();
        let q_pen = build_quadratics(&pc.f_bb, &pc.u, ch, rs, &tight, cfg.noise, cfg.p_max / (1.0 + margin))?;
        d = epmo_best_effort(&q_pen, &d, &opts.penalty)?.d;
        if max_scaled_violation(q, &d) <= 0.0 {
            break;
        }
    }
    Ok(d)
}

/// Proposes a new RF stage for the current digital stage and `U`.
#[allow(clippy::too_many_arguments)]
fn rf_step(
    ch: &ChannelSet,
    rs: &RadarSpec,
    cfg: &SystemConfig,
    pc: &HybridPrecoder,
    gammas: &[f64],
    method: RfMethod,
    feasible_now: bool,
    opts: &SolveOptions,
) -> Result<CMatrix> {
    let q = build_quadratics(&pc.f_bb, &pc.u, ch, rs, gammas, cfg.noise, cfg.p_max)?;
    let mut d: Vec<Complex64> = pc.f_rf.iter().copied().collect();
    match method {
        RfMethod::Epmo => d = penalty_pass(ch, rs, cfg, pc, gammas, &q, d, !feasible_now, opts)?,
        RfMethod::Bmm => {
            if max_scaled_violation(&q, &d) > opts.bmm.tol_inner {
                d = penalty_pass(ch, rs, cfg, pc, gammas, &q, d, true, opts)?;
            }
            if max_scaled_violation(&q, &d) <= opts.bmm.tol_inner {
                match bmm_solve(&q, &d, &opts.bmm) {
                    Ok(r) => d = r.d,
                    Err(e) if e.is_infeasible() => {}
                    Err(e) => return Err(e),
                }
            }
        }
    }
    Ok(q.rf_of(&d))
}

/// Digital stage and `U` for a given RF stage.
fn complete_cycle(
    ch: &ChannelSet,
    rs: &RadarSpec,
    cfg: &SystemConfig,
    f_rf: CMatrix,
    pc: &HybridPrecoder,
    gammas: &[f64],
    tol: f64,
) -> Result<HybridPrecoder> {
    let f_bb = bb_step(ch, rs, cfg, &f_rf, pc, gammas, tol)?;
    let u = update_u(&f_rf, &f_bb, rs)?;
    Ok(HybridPrecoder { f_rf, f_bb, u })
}

fn is_feasible(ch: &ChannelSet, cfg: &SystemConfig, pc: &HybridPrecoder, gammas: &[f64]) -> bool {
    meets_sinr(ch, pc, gammas, cfg.noise) && pc.power() <= cfg.p_max * (1.0 + 1e-10)
}

/// Block-coordinate descent on the RBE at fixed SINR thresholds:
/// `F_RF`, then `F_BB`, then `U`, until the relative RBE change is below `tol_bcd`.
pub fn inner_bcd_with(
    gammas: &[f64],
    cfg: &SystemConfig,
    ch: &ChannelSet,
    rs: &RadarSpec,
    init: &HybridPrecoder,
    arch: Architecture,
    opts: &SolveOptions,
) -> Result<InnerResult> {
    if gammas.len() != ch.n_users() {
        return Err(Error::Dimension("one threshold per user is required".into()));
    }
    let mut pc = init.clone();
    let mut cur = rbe(&pc, rs);
    let mut trace = vec![cur];
    let infeasible = |pc: HybridPrecoder, trace: Vec<f64>, it: usize, e: Error| -> Result<InnerResult> {
        if e.is_infeasible() || matches!(e, Error::Solver { .. } | Error::Precondition(_)) {
            Ok(InnerResult {
                rbe: *trace.last().expect("trace starts non-empty"),
                precoder: pc,
                trace,
                iterations: it,
                feasible: false,
                reason: Some(e.to_string()),
            })
        } else {
            Err(e)
        }
    };

    // Make the start meet the constraints through the convex stage when possible.
    if !is_feasible(ch, cfg, &pc, gammas) {
        match complete_cycle(ch, rs, cfg, pc.f_rf.clone(), &pc, gammas, opts.bb_tol) {
            Ok(p) => {
                pc = p;
                cur = rbe(&pc, rs);
                trace[0] = cur;
            }
            Err(e) if arch == Architecture::FullyDigital => return infeasible(pc, trace, 0, e),
            Err(_) => {}
        }
    }

    let mut iterations = 0;
    for it in 0..opts.max_bcd {
        iterations = it + 1;
        let feasible_now = is_feasible(ch, cfg, &pc, gammas);
        let proposal = match arch {
            Architecture::Hybrid(method) => {
                let f_rf = rf_step(ch, rs, cfg, &pc, gammas, method, feasible_now, opts)?;
                complete_cycle(ch, rs, cfg, f_rf, &pc, gammas, opts.bb_tol)
                    .ok()
                    .filter(|p| !feasible_now || rbe(p, rs) <= cur)
            }
            Architecture::FullyDigital => None,
        };
        // Otherwise redo the convex stages on the current RF stage, which
        // keeps the incumbent digital stage feasible.
        pc = match proposal {
            Some(p) => p,
            None => match complete_cycle(ch, rs, cfg, pc.f_rf.clone(), &pc, gammas, opts.bb_tol) {
                Ok(p) => p,
                Err(e) => return infeasible(pc, trace, iterations, e),
            },
        };
        let next = rbe(&pc, rs);
        trace.push(next);
        let change = (cur - next).abs() / cur.max(1e-300);
        cur = next;
        if change <= opts.tol_bcd {
            break;
        }
    }
    let feasible = is_feasible(ch, cfg, &pc, gammas);
    Ok(InnerResult {
        rbe: cur,
        precoder: pc,
        trace,
        iterations,
        feasible,
        reason: (!feasible).then(|| "converged point misses a constraint".to_string()),
    })
}

/// [`inner_bcd_with`] for a sum rate, with thresholds from the equal frame split.
pub fn inner_bcd(
    rate: f64,
    cfg: &SystemConfig,
    ch: &ChannelSet,
    rs: &RadarSpec,
    init: &HybridPrecoder,
    opts: &SolveOptions,
) -> Result<InnerResult> {
    let beta = equal_split(cfg.frame_budget, cfg.n_cu);
    let gammas = sinr_thresholds(cfg, rate, &beta, RateModel::FiniteBlocklength)?;
    inner_bcd_with(&gammas, cfg, ch, rs, init, Architecture::Hybrid(opts.rf_method), opts)
}

/// Relative margin added to the SINR thresholds so rounding in the solvers
/// cannot leave the achieved SINR a hair below the threshold.
const GAMMA_MARGIN: f64 = 1e-9;

/// Outer bisection on the sum rate for any architecture and rate model.
pub fn solve_point(
    cfg: &SystemConfig,
    ch: &ChannelSet,
    rs: &RadarSpec,
    arch: Architecture,
    model: RateModel,
    opts: &SolveOptions,
) -> Result<ParetoPoint> {
    cfg.validate()?;
    opts.validate()?;
    if ch.n_users() != cfg.n_cu || ch.n_tx() != cfg.n_tx {
        return Err(Error::Dimension("channel set does not match the configuration".into()));
    }
    let init = match arch {
        Architecture::Hybrid(_) => {
            let mut rng = Rng::new(opts.seed, opts.stream);
            init_precoder(cfg, rs, &mut rng)?
        }
        Architecture::FullyDigital => init_digital(cfg, rs)?,
    };
    let e_max = cfg.e_max_value();
    let m = cfg.n_cu;
    let mut lo = 0.0;
    let mut hi = opts.rate_upper_init.unwrap_or_else(|| rate_upper_bound(cfg, ch));
    let steps = bisection_steps(hi - lo, opts.tol_rate);
    let mut beta = equal_split(cfg.frame_budget, m);
    let mut best: Option<(HybridPrecoder, f64, Vec<usize>, Vec<f64>)> = None;
    let mut outer_trace = Vec::with_capacity(steps);
    let mut inner_traces = Vec::with_capacity(steps);

    for iteration in 0..steps {
        let rate = 0.5 * (lo + hi);
        let gammas: Vec<f64> = sinr_thresholds(cfg, rate, &beta, model)?
            .into_iter()
            .map(|g| g * (1.0 + GAMMA_MARGIN))
            .collect();
        let inner = inner_bcd_with(&gammas, cfg, ch, rs, &init, arch, opts)?;
        let mut accepted = None;
        if inner.feasible && inner.rbe <= e_max && inner.precoder.power() <= cfg.p_max * (1.0 + 1e-10) {
            let achieved = sinr(ch, &inner.precoder, cfg.noise);
            let alloc = match model {
                RateModel::FiniteBlocklength => {
                    allocate_blocklengths(&achieved, rate, &cfg.eta, &cfg.eps, cfg.frame_budget).ok()
                }
                RateModel::Shannon => {
                    let ok = (0..m).all(|i| shannon_rate(achieved[i]) >= cfg.eta[i] * rate);
                    ok.then(|| beta.clone())
                }
            };
            if let Some(b) = alloc {
                accepted = Some((b, achieved));
            }
        }
        outer_trace.push(OuterRow {
            iteration,
            rate,
            rbe: inner.rbe,
            bcd_iterations: inner.iterations,
            feasible: accepted.is_some(),
        });
        inner_traces.push(inner.trace);
        match accepted {
            Some((b, achieved)) => {
                lo = rate;
                if model == RateModel::FiniteBlocklength {
                    beta = b.clone();
                }
                best = Some((inner.precoder, inner.rbe, b, achieved));
            }
            None => hi = rate,
        }
    }

    Ok(match best {
        Some((precoder, rbe_val, beta, achieved)) => ParetoPoint {
            rbe: rbe_val,
            rate: lo,
            precoder,
            beta,
            sinr: achieved,
            outer_trace,
            inner_traces,
            rate_bracket: (lo, hi),
            feasible: true,
        },
        None => ParetoPoint {
            rbe: rbe(&init, rs),
            rate: 0.0,
            sinr: sinr(ch, &init, cfg.noise),
            precoder: init,
            beta,
            outer_trace,
            inner_traces,
            rate_bracket: (lo, hi),
            feasible: false,
        },
    })
}

/// The hybrid finite-blocklength solver.
pub fn tlbs_solve(cfg: &SystemConfig, ch: &ChannelSet, rs: &RadarSpec, opts: &SolveOptions) -> Result<ParetoPoint> {
    solve_point(
        cfg,
        ch,
        rs,
        Architecture::Hybrid(opts.rf_method),
        RateModel::FiniteBlocklength,
        opts,
    )
}

/// Re-derives every claim a feasible point makes from the model evaluators alone.
pub fn check_point(
    cfg: &SystemConfig,
    ch: &ChannelSet,
    rs: &RadarSpec,
    point: &ParetoPoint,
    arch: Architecture,
    model: RateModel,
) -> Result<()> {
    if !point.feasible {
        return Err(Error::Infeasible("point is flagged infeasible".into()));
    }
    let pc = &point.precoder;
    match arch {
        Architecture::Hybrid(_) => pc.check_invariants(Some(cfg.p_max))?,
        Architecture::FullyDigital => {
            if pc.power() > cfg.p_max + 1e-8 {
                return Err(Error::Precondition("power budget exceeded".into()));
            }
        }
    }
    let e = rbe(pc, rs);
    if e > cfg.e_max_value() + 1e-8 {
        return Err(Error::Precondition(format!("RBE {e} exceeds the bound")));
    }
    if (e - point.rbe).abs() > 1e-9 * e.max(1.0) {
        return Err(Error::Precondition(format!(
            "reported RBE {} differs from {e}",
            point.rbe
        )));
    }
    let total: usize = point.beta.iter().sum();
    if point.beta.len() != cfg.n_cu || total != cfg.frame_budget {
        return Err(Error::Precondition(format!("block lengths sum to {total}")));
    }
    let gammas = sinr(ch, pc, cfg.noise);
    for m in 0..cfg.n_cu {
        let r = match model {
            RateModel::FiniteBlocklength => fbl_rate(gammas[m], point.beta[m] as f64, cfg.eps[m])?,
            RateModel::Shannon => shannon_rate(gammas[m]),
        };
        if r < cfg.eta[m] * point.rate - 1e-6 {
            return Err(Error::Precondition(format!(
                "user {m} gets {r} nats, needs {}",
                cfg.eta[m] * point.rate
            )));
        }
    }
    Ok(())
}
