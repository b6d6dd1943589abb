//! Bisection-based majorization-minimization for the unit-modulus RF precoder.
//!
//! Each iteration replaces the objective and every constraint by a linear
//! majorizer at the current point, finds the dual multipliers of the resulting
//! problem by coordinate-wise bisection, and takes the closed-form primal
//! minimizer (a phase projection).
//!
//! Constraints are handled in scaled form (`g_m / N_o`, `ω_p / P_max`) so that
//! bisection tolerances are dimensionless.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{re_inner, CVector};
use crate::numerics::unit_phase_of;
use crate::quadratics::QuadraticForms;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BmmOptions {
    pub tol_inner: f64,
    pub tol_outer: f64,
    pub max_iter: usize,
    pub max_sweeps: usize,
    pub max_doublings: usize,
    pub max_bisections: usize,
}

impl Default for BmmOptions {
    fn default() -> Self {
        BmmOptions {
            tol_inner: 1e-6,
            tol_outer: 1e-6,
            max_iter: 500,
            max_sweeps: 50,
            max_doublings: 64,
            max_bisections: 200,
        }
    }
}

/// Multipliers of the SINR constraints (`lambda`) and the power constraint (`vartheta`).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DualState {
    pub lambda: Vec<f64>,
    pub vartheta: f64,
    pub lagrangian_trace: Vec<f64>,
}

impl DualState {
    pub fn zeros(n_sinr: usize) -> Self {
        DualState {
            lambda: vec![0.0; n_sinr],
            vartheta: 0.0,
            lagrangian_trace: Vec::new(),
        }
    }

    fn set(&mut self, k: usize, v: f64) {
        if k < self.lambda.len() {
            self.lambda[k] = v;
        } else {
            self.vartheta = v;
        }
    }

    fn all(&self) -> Vec<f64> {
        let mut v = self.lambda.clone();
        v.push(self.vartheta);
        v
    }
}

/// Linear majorizers at an anchor: `value(d) = k − 2 Re(d^H v)`.
#[derive(Clone, Debug)]
pub struct Surrogate {
    pub k_obj: f64,
    pub v_obj: CVector,
    /// Scaled constraint surrogates, one per entry of `QuadraticForms::constraints`.
    pub k_con: Vec<f64>,
    pub v_con: Vec<CVector>,
}

fn linear_value(k: f64, v: &CVector, d: &[Complex64]) -> f64 {
    k - 2.0 * re_inner(d, v.as_slice())
}

impl Surrogate {
    pub fn objective(&self, d: &[Complex64]) -> f64 {
        linear_value(self.k_obj, &self.v_obj, d)
    }

    pub fn constraint(&self, k: usize, d: &[Complex64]) -> f64 {
        linear_value(self.k_con[k], &self.v_con[k], d)
    }

    pub fn n_constraints(&self) -> usize {
        self.k_con.len()
    }

    fn combined(&self, mult: &[f64]) -> CVector {
        let mut v = self.v_obj.clone();
        for (k, &l) in mult.iter().enumerate() {
            if l != 0.0 {
                v.axpy(Complex64::from(l), &self.v_con[k], Complex64::from(1.0));
            }
        }
        v
    }

    /// Minimizer of the surrogate Lagrangian over unit-modulus vectors.
    pub fn minimizer(&self, mult: &[f64]) -> Vec<Complex64> {
        self.combined(mult).iter().map(|&z| unit_phase_of(z)).collect()
    }

    pub fn lagrangian(&self, d: &[Complex64], mult: &[f64]) -> f64 {
        let mut l = self.objective(d);
        for (k, &m) in mult.iter().enumerate() {
            l += m * self.constraint(k, d);
        }
        l
    }

    /// Dual function value `min_d L(d, mult)`.
    pub fn dual_value(&self, mult: &[f64]) -> f64 {
        let v = self.combined(mult);
        let mut k = self.k_obj;
        for (i, &m) in mult.iter().enumerate() {
            k += m * self.k_con[i];
        }
        k - 2.0 * v.iter().map(|z| z.norm_sqr().sqrt()).sum::<f64>()
    }
}

fn check_unit_modulus(d: &[Complex64]) -> Result<()> {
    let worst = d.iter().map(|z| (z.norm_sqr().sqrt() - 1.0).abs()).fold(0.0, f64::max);
    if worst > 1e-9 {
        return Err(Error::Domain(format!("anchor is not unit modulus (error {worst:e})")));
    }
    Ok(())
}

/// Tangent-plane majorizers of the objective and scaled constraints at `d_anchor`,
/// using the trace constants of the quadratic forms.
pub fn majorize(q: &QuadraticForms, d_anchor: &[Complex64]) -> Result<Surrogate> {
    check_unit_modulus(d_anchor)?;
    let dim = q.dim() as f64;
    let anchor = CVector::from_column_slice(d_anchor);
    let e = q.eval(d_anchor);
    let xi_d = q.apply_xi(&e);
    let quad = re_inner(d_anchor, xi_d.as_slice());
    let mut v_obj = &anchor * Complex64::from(q.c_r) - &xi_d;
    v_obj += &q.a_r;
    let k_obj = 2.0 * q.c_r * dim - quad + q.e_r;

    let n = q.constraints.len();
    let mut k_con = Vec::with_capacity(n);
    let mut v_con = Vec::with_capacity(n);
    let mut weights = vec![0.0; n];
    for k in 0..n {
        weights[k] = 1.0;
        let s = q.scale(k);
        let qd = q.combine(&e, 0.0, &weights);
        weights[k] = 0.0;
        let c = q.trace(k);
        let quad = re_inner(d_anchor, qd.as_slice());
        k_con.push(s * 2.0 * c * dim - quad + q.scaled_offset(k));
        v_con.push(&anchor * Complex64::from(s * c) - qd);
    }
    Ok(Surrogate {
        k_obj,
        v_obj,
        k_con,
        v_con,
    })
}

/// Closed-form minimizer of the surrogate Lagrangian at the given multipliers.
pub fn primal_step(q: &QuadraticForms, d_anchor: &[Complex64], duals: &DualState) -> Result<Vec<Complex64>> {
    let s = majorize(q, d_anchor)?;
    Ok(s.minimizer(&duals.all()))
}

/// Coordinate ascent on the surrogate dual, one multiplier at a time.
pub fn dual_bisection(sur: &Surrogate, duals_in: &DualState, opts: &BmmOptions) -> Result<DualState> {
    let n = sur.n_constraints();
    if duals_in.lambda.len() + 1 != n {
        return Err(Error::Dimension("dual state does not match constraint count".into()));
    }
    let tol = opts.tol_inner;
    let mut duals = duals_in.clone();
    duals.lagrangian_trace.clear();
    let mut mult = duals.all();
    let mut prev = sur.dual_value(&mult);
    duals.lagrangian_trace.push(prev);
    for _ in 0..opts.max_sweeps {
        for k in 0..n {
            mult[k] = 0.0;
            let base = sur.combined(&mult);
            let kk = sur.k_con[k];
            let (br, bi): (Vec<f64>, Vec<f64>) = base.iter().map(|z| (z.re, z.im)).unzip();
            let (vr, vi): (Vec<f64>, Vec<f64>) = sur.v_con[k].iter().map(|z| (z.re, z.im)).unzip();
            // Surrogate constraint k at the Lagrangian minimizer for multiplier `lam`.
            let g_at = |lam: f64| {
                let mut acc = 0.0;
                for l in 0..br.len() {
                    let xr = br[l] + vr[l] * lam;
                    let xi = bi[l] + vi[l] * lam;
                    let s = xr * xr + xi * xi;
                    acc += if s > 0.0 {
                        (xr * vr[l] + xi * vi[l]) / s.sqrt()
                    } else {
                        vr[l]
                    };
                }
                kk - 2.0 * acc
            };
            if g_at(0.0) <= 0.0 {
                continue;
            }
            let mut hi = 1.0;
            let mut doublings = 0;
            while g_at(hi) > 0.0 {
                doublings += 1;
                if doublings > opts.max_doublings {
                    return Err(Error::Divergence { index: k });
                }
                hi *= 2.0;
            }
            let mut lo = 0.0;
            let mut found = hi;
            for _ in 0..opts.max_bisections {
                let mid = 0.5 * (lo + hi);
                let g = g_at(mid);
                if g <= 0.0 && g > -tol {
                    found = mid;
                    break;
                }
                if g > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
                found = hi;
                if hi - lo <= f64::EPSILON * hi {
                    break;
                }
            }
            mult[k] = found;
        }
        let val = sur.dual_value(&mult);
        duals.lagrangian_trace.push(val);
        let change = (val - prev).abs() / prev.abs().max(1e-300);
        prev = val;
        if change <= tol {
            break;
        }
    }
    for (k, &m) in mult.iter().enumerate() {
        duals.set(k, m);
    }
    Ok(duals)
}

#[derive(Clone, Debug)]
pub struct BmmResult {
    pub d: Vec<Complex64>,
    /// Objective at the initial point followed by every accepted iterate.
    pub trace: Vec<f64>,
    pub duals: DualState,
}

/// Largest scaled constraint value at `d`.
pub fn max_scaled_violation(q: &QuadraticForms, d: &[Complex64]) -> f64 {
    let e = q.eval(d);
    q.scaled_values(&e).into_iter().fold(f64::NEG_INFINITY, f64::max)
}

/// Runs the MM iteration from a feasible unit-modulus start.
pub fn bmm_solve(q: &QuadraticForms, d_init: &[Complex64], opts: &BmmOptions) -> Result<BmmResult> {
    check_unit_modulus(d_init)?;
    if d_init.len() != q.dim() {
        return Err(Error::Dimension(format!(
            "d has {} entries, expected {}",
            d_init.len(),
            q.dim()
        )));
    }
    let v0 = max_scaled_violation(q, d_init);
    if v0 > opts.tol_inner {
        return Err(Error::Precondition(format!(
            "initial point violates the constraints by {v0:e}"
        )));
    }
    let mut d = d_init.to_vec();
    let mut obj = q.eval(&d).objective;
    let mut trace = vec![obj];
    let mut duals = DualState::zeros(q.constraints.len() - 1);
    for _ in 0..opts.max_iter {
        let sur = majorize(q, &d)?;
        duals = dual_bisection(&sur, &duals, opts)?;
        let cand = sur.minimizer(&duals.all());
        let e = q.eval(&cand);
        let feasible = q.scaled_values(&e).iter().all(|&g| g <= opts.tol_inner);
        if !feasible || e.objective > obj {
            break;
        }
        let change = (obj - e.objective) / obj.max(1e-300);
        d = cand;
        obj = e.objective;
        trace.push(obj);
        if change <= opts.tol_outer {
            break;
        }
    }
    Ok(BmmResult { d, trace, duals })
}
