//! C ABI over the pareto-isac solver.
//!
//! Handles are opaque and owned by the caller once returned; release them with
//! the matching `*_free`. Every entry point returns a [`PiStatus`]. On failure
//! the message is available from [`pi_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use pareto_isac::channel::ChannelSet;
use pareto_isac::cli::{parse_config, LoadedConfig};
use pareto_isac::experiments::{trial_options, trial_scenario, Axis, Scheme};
use pareto_isac::fbl::solve_gamma_threshold;
use pareto_isac::model::{beampattern, RadarSpec};
use pareto_isac::tlbs::{check_point, solve_point, ParetoPoint};
use pareto_isac::Error;

/// Status code of every call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PiStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Dimension = 4,
    Infeasible = 5,
    Solver = 6,
    Io = 7,
    /// The caller's buffer is shorter than the required length, which is still written.
    BufferTooSmall = 8,
    CheckFailed = 9,
    Panic = 10,
}

/// System configuration, solver settings and seed.
pub struct PiConfig {
    inner: LoadedConfig,
}

/// A solved trial together with the scenario it was solved on.
pub struct PiPoint {
    cfg: LoadedConfig,
    scheme: Scheme,
    channels: ChannelSet,
    radar: RadarSpec,
    point: ParetoPoint,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PiSystemInfo {
    pub n_tx: usize,
    pub n_rf: usize,
    pub n_cu: usize,
    pub n_tar: usize,
    pub frame_budget: usize,
    /// Watts.
    pub p_max: f64,
    pub noise: f64,
    /// Infinity when unbounded.
    pub e_max: f64,
    pub seed: u64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PiPointSummary {
    /// Sum rate, nats per channel use.
    pub rate: f64,
    pub rbe: f64,
    pub feasible: bool,
    pub outer_iterations: usize,
    pub n_tx: usize,
    pub n_streams: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(PiStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) => PiStatus::Config,
            Error::Dimension(_) => PiStatus::Dimension,
            Error::Infeasible(_) | Error::PenaltyInfeasible { .. } | Error::Divergence { .. } => PiStatus::Infeasible,
            Error::Solver { .. } => PiStatus::Solver,
            Error::Io(_) | Error::Json(_) => PiStatus::Io,
            Error::Domain(_) | Error::Bracket { .. } | Error::Precondition(_) => PiStatus::InvalidArgument,
        };
        Failure(code, e.to_string())
    }
}

fn fail(code: PiStatus, msg: impl Into<String>) -> Failure {
    Failure(code, msg.into())
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PiStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PiStatus::Ok,
        Ok(Err(Failure(code, msg))) => {
            set_error(msg);
            code
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            PiStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(PiStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(PiStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| fail(PiStatus::NullPointer, format!("{what} is null")))
}

unsafe fn deref_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| fail(PiStatus::NullPointer, format!("{what} is null")))
}

/// Copies `data` into the caller buffer; `required` always receives the full length.
unsafe fn fill<T: Copy>(data: &[T], buf: *mut T, len: usize, required: *mut usize) -> Result<(), Failure> {
    *deref_mut(required, "required")? = data.len();
    if len < data.len() {
        return Err(fail(
            PiStatus::BufferTooSmall,
            format!("buffer holds {len}, need {}", data.len()),
        ));
    }
    if !data.is_empty() {
        if buf.is_null() {
            return Err(fail(PiStatus::NullPointer, "buffer is null"));
        }
        ptr::copy_nonoverlapping(data.as_ptr(), buf, data.len());
    }
    Ok(())
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pi_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null after a successful one.
/// The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn pi_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Default configuration.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn pi_config_default(out: *mut *mut PiConfig) -> PiStatus {
    guard(|| {
        let slot = deref_mut(out, "out")?;
        let inner = parse_config("")?;
        *slot = Box::into_raw(Box::new(PiConfig { inner }));
        Ok(())
    })
}

/// Configuration parsed from TOML text in the CLI's config format.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pi_config_from_toml(toml: *const c_char, out: *mut *mut PiConfig) -> PiStatus {
    guard(|| {
        let slot = deref_mut(out, "out")?;
        let text = str_arg(toml, "toml")?;
        let inner = parse_config(text)?;
        *slot = Box::into_raw(Box::new(PiConfig { inner }));
        Ok(())
    })
}

/// # Safety
/// `cfg` must be null or a handle from `pi_config_*` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pi_config_free(cfg: *mut PiConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Sets one sweep parameter by axis name: `e_max`, `frame_budget`, `eps`,
/// `n_rf`, `eta` or `p_max` (watts). An infinite `e_max` removes the bound.
///
/// # Safety
/// `cfg` must be a live handle and `axis` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn pi_config_set(cfg: *mut PiConfig, axis: *const c_char, value: f64) -> PiStatus {
    guard(|| {
        let cfg = deref_mut(cfg, "cfg")?;
        let axis = Axis::parse(str_arg(axis, "axis")?)?;
        cfg.inner.system = axis.apply(&cfg.inner.system, value)?;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pi_config_set_seed(cfg: *mut PiConfig, seed: u64) -> PiStatus {
    guard(|| {
        deref_mut(cfg, "cfg")?.inner.seed = seed;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pi_config_info(cfg: *const PiConfig, out: *mut PiSystemInfo) -> PiStatus {
    guard(|| {
        let c = &deref(cfg, "cfg")?.inner;
        let s = &c.system;
        *deref_mut(out, "out")? = PiSystemInfo {
            n_tx: s.n_tx,
            n_rf: s.n_rf,
            n_cu: s.n_cu,
            n_tar: s.n_tar,
            frame_budget: s.frame_budget,
            p_max: s.p_max,
            noise: s.noise,
            e_max: s.e_max_value(),
            seed: c.seed,
        };
        Ok(())
    })
}

/// Solves one trial with `scheme` (`tlbs_bmm`, `tlbs_epmo`, `tlbs_fdb` or
/// `ibl_fdb`). Channels and the initial precoder come from the config's seed
/// and `trial`, as in the CLI. An infeasible point is still returned with
/// status `Ok`; query its summary.
///
/// # Safety
/// `cfg` must be a live handle, `scheme` a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pi_solve(
    cfg: *const PiConfig,
    scheme: *const c_char,
    trial: usize,
    out: *mut *mut PiPoint,
) -> PiStatus {
    guard(|| {
        let slot = deref_mut(out, "out")?;
        let cfg = deref(cfg, "cfg")?.inner.clone();
        let scheme = Scheme::parse(str_arg(scheme, "scheme")?)?;
        let (channels, radar) = trial_scenario(&cfg.system, cfg.seed, trial)?;
        let opts = trial_options(&cfg.solver.options(cfg.seed)?, scheme, trial);
        let point = solve_point(
            &cfg.system,
            &channels,
            &radar,
            scheme.architecture(),
            scheme.rate_model(),
            &opts,
        )?;
        *slot = Box::into_raw(Box::new(PiPoint {
            cfg,
            scheme,
            channels,
            radar,
            point,
        }));
        Ok(())
    })
}

/// # Safety
/// `pt` must be null or a handle from `pi_solve` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pi_point_free(pt: *mut PiPoint) {
    if !pt.is_null() {
        drop(Box::from_raw(pt));
    }
}

/// # Safety
/// `pt` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pi_point_summary(pt: *const PiPoint, out: *mut PiPointSummary) -> PiStatus {
    guard(|| {
        let p = deref(pt, "pt")?;
        let f = p.point.precoder.product();
        *deref_mut(out, "out")? = PiPointSummary {
            rate: p.point.rate,
            rbe: p.point.rbe,
            feasible: p.point.feasible,
            outer_iterations: p.point.outer_trace.len(),
            n_tx: f.nrows(),
            n_streams: f.ncols(),
        };
        Ok(())
    })
}

/// Block lengths per user.
///
/// # Safety
/// `pt` must be a live handle, `buf` valid for `len` writes and `required` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pi_point_beta(
    pt: *const PiPoint,
    buf: *mut usize,
    len: usize,
    required: *mut usize,
) -> PiStatus {
    guard(|| fill(&deref(pt, "pt")?.point.beta, buf, len, required))
}

/// Achieved SINR per user, linear.
///
/// # Safety
/// As for `pi_point_beta`.
#[no_mangle]
pub unsafe extern "C" fn pi_point_sinr(
    pt: *const PiPoint,
    buf: *mut f64,
    len: usize,
    required: *mut usize,
) -> PiStatus {
    guard(|| fill(&deref(pt, "pt")?.point.sinr, buf, len, required))
}

/// The overall precoder `F_RF F_BB`, column-major with interleaved real and
/// imaginary parts (`2 * n_tx * n_streams` doubles).
///
/// # Safety
/// As for `pi_point_beta`.
#[no_mangle]
pub unsafe extern "C" fn pi_point_precoder(
    pt: *const PiPoint,
    buf: *mut f64,
    len: usize,
    required: *mut usize,
) -> PiStatus {
    guard(|| {
        let f = deref(pt, "pt")?.point.precoder.product();
        let flat: Vec<f64> = f.iter().flat_map(|z| [z.re, z.im]).collect();
        fill(&flat, buf, len, required)
    })
}

/// Linear transmit gain at `n` angles in degrees.
///
/// # Safety
/// `pt` must be a live handle; `angles` and `gains` must be valid for `n` elements.
#[no_mangle]
pub unsafe extern "C" fn pi_point_beampattern(
    pt: *const PiPoint,
    angles: *const f64,
    n: usize,
    gains: *mut f64,
) -> PiStatus {
    guard(|| {
        let p = deref(pt, "pt")?;
        if n == 0 {
            return Err(fail(PiStatus::InvalidArgument, "empty angle grid"));
        }
        if angles.is_null() || gains.is_null() {
            return Err(fail(PiStatus::NullPointer, "angles or gains is null"));
        }
        let grid = std::slice::from_raw_parts(angles, n);
        let g = beampattern(&p.point.precoder, grid, &p.cfg.system.geometry())?;
        ptr::copy_nonoverlapping(g.as_ptr(), gains, n);
        Ok(())
    })
}

/// Re-checks a feasible point against the model: constraints, reported RBE
/// and rate. Returns `CheckFailed` with the reason otherwise.
///
/// # Safety
/// `pt` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pi_point_check(pt: *const PiPoint) -> PiStatus {
    guard(|| {
        let p = deref(pt, "pt")?;
        check_point(
            &p.cfg.system,
            &p.channels,
            &p.radar,
            &p.point,
            p.scheme.architecture(),
            p.scheme.rate_model(),
        )
        .map_err(|e| fail(PiStatus::CheckFailed, e.to_string()))
    })
}

/// Smallest SINR whose finite-blocklength rate at block length `beta` and
/// error probability `eps` reaches `target` nats.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pi_gamma_threshold(target: f64, beta: f64, eps: f64, out: *mut f64) -> PiStatus {
    guard(|| {
        let slot = deref_mut(out, "out")?;
        *slot = solve_gamma_threshold(target, beta, eps)?.gamma_min;
        Ok(())
    })
}
