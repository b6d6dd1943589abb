//! Quadratic forms in `d = vec(F_RF)` for the RBE objective and the SINR and
//! power constraints at a fixed baseband precoder.
//!
//! The Kronecker-structured matrices are never formed in the solvers; every
//! product `Q d` is evaluated through `F_RF` directly in `O(N_t N_RF M)`.
//! Dense versions are available for verification.

use num_complex::Complex64;

use crate::channel::ChannelSet;
use crate::error::{Error, Result};
use crate::linalg::{frobenius_sq, kron, unvec, CMatrix, CVector};
use crate::model::RadarSpec;

/// One constraint of the RF subproblem, feasible iff its value is `<= 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Constraint {
    /// `Σ_{n≠m} |h_m^H F f_n|² − |h_m^H F f_m|²/Γ_m + N_o`.
    /// `scale` is `Γ_m / (Γ_m N_o + ‖h_m‖² P_max)`, so the scaled value is the SINR
    /// shortfall `Γ_m (N_o + I) − S` relative to its largest magnitude.
    Sinr {
        user: usize,
        gamma: f64,
        trace: f64,
        scale: f64,
    },
    /// `‖F F_BB‖² − P_max`.
    Power,
}

#[derive(Clone, Debug)]
pub struct QuadraticForms {
    pub n_tx: usize,
    pub n_rf: usize,
    pub f_bb: CMatrix,
    /// `T = F_BB F_BB^H`.
    pub t: CMatrix,
    /// `F_r U`.
    pub target: CMatrix,
    pub a_r: CVector,
    pub e_r: f64,
    /// Channels as columns, `N_t x M`.
    pub channels: CMatrix,
    /// Active SINR constraints followed by the power constraint.
    pub constraints: Vec<Constraint>,
    pub noise: f64,
    pub p_max: f64,
    pub c_r: f64,
    pub c_p: f64,
}

/// Quantities shared by every evaluation at one point `d`.
#[derive(Clone, Debug)]
pub struct Eval {
    /// `F_RF F_BB`.
    pub w: CMatrix,
    /// `y[(m, n)] = h_m^H F_RF f_n`.
    pub y: CMatrix,
    pub objective: f64,
    pub power: f64,
}

/// Builds the forms. Users with `Γ_m <= 0` carry no SINR constraint.
pub fn build_quadratics(
    f_bb: &CMatrix,
    u: &CMatrix,
    ch: &ChannelSet,
    rs: &RadarSpec,
    gammas: &[f64],
    noise: f64,
    p_max: f64,
) -> Result<QuadraticForms> {
    let n_tx = ch.n_tx();
    let m = ch.n_users();
    let n_rf = f_bb.nrows();
    if f_bb.ncols() != m || gammas.len() != m {
        return Err(Error::Dimension(format!(
            "F_BB is {}x{}, {} gammas, {} users",
            f_bb.nrows(),
            f_bb.ncols(),
            gammas.len(),
            m
        )));
    }
    if rs.f_r.nrows() != n_tx || rs.f_r.ncols() != u.nrows() || u.ncols() != m {
        return Err(Error::Dimension("radar precoder and U do not conform".into()));
    }
    let target = &rs.f_r * u;
    let t = f_bb * f_bb.adjoint();
    let a_r = CVector::from_column_slice((&target * f_bb.adjoint()).as_slice());
    let e_r = frobenius_sq(&target);
    let channels = ch.matrix();
    let col_norms: Vec<f64> = (0..m).map(|n| f_bb.column(n).norm_squared()).collect();
    let mut constraints = Vec::with_capacity(m + 1);
    for (user, &gamma) in gammas.iter().enumerate() {
        if gamma > 0.0 {
            let others: f64 = (0..m).filter(|&n| n != user).map(|n| col_norms[n]).sum();
            let trace = others * ch.h[user].norm_squared();
            let scale = gamma / (gamma * noise + ch.h[user].norm_squared() * p_max);
            constraints.push(Constraint::Sinr {
                user,
                gamma,
                trace,
                scale,
            });
        }
    }
    constraints.push(Constraint::Power);
    let c_r = n_tx as f64 * t.trace().re;
    Ok(QuadraticForms {
        n_tx,
        n_rf,
        f_bb: f_bb.clone(),
        t,
        target,
        a_r,
        e_r,
        channels,
        constraints,
        noise,
        p_max,
        c_r,
        c_p: c_r,
    })
}

impl QuadraticForms {
    pub fn dim(&self) -> usize {
        self.n_tx * self.n_rf
    }

    pub fn n_users(&self) -> usize {
        self.f_bb.ncols()
    }

    pub fn rf_of(&self, d: &[Complex64]) -> CMatrix {
        unvec(d, self.n_tx, self.n_rf)
    }

    pub fn eval(&self, d: &[Complex64]) -> Eval {
        let (nt, nrf, m) = (self.n_tx, self.n_rf, self.n_users());
        let mut w = CMatrix::zeros(nt, m);
        let mut y = CMatrix::zeros(m, m);
        let mut objective = 0.0;
        let mut power = 0.0;
        let h = self.channels.as_slice();
        let tgt = self.target.as_slice();
        for n in 0..m {
            let wn = &mut w.as_mut_slice()[n * nt..(n + 1) * nt];
            for j in 0..nrf {
                let c = self.f_bb[(j, n)];
                for (acc, &x) in wn.iter_mut().zip(&d[j * nt..(j + 1) * nt]) {
                    *acc += x * c;
                }
            }
            for (i, &x) in wn.iter().enumerate() {
                objective += (x - tgt[n * nt + i]).norm_sqr();
                power += x.norm_sqr();
            }
            for u in 0..m {
                let hu = &h[u * nt..(u + 1) * nt];
                y[(u, n)] = hu.iter().zip(wn.iter()).map(|(a, b)| a.conj() * b).sum();
            }
        }
        Eval { w, y, objective, power }
    }

    fn sinr_value(&self, e: &Eval, user: usize, gamma: f64) -> f64 {
        let m = self.n_users();
        let mut v = self.noise;
        for n in 0..m {
            let p = e.y[(user, n)].norm_sqr();
            if n == user {
                v -= p / gamma;
            } else {
                v += p;
            }
        }
        v
    }

    /// Raw constraint value.
    pub fn constraint_value(&self, e: &Eval, k: usize) -> f64 {
        match self.constraints[k] {
            Constraint::Sinr { user, gamma, .. } => self.sinr_value(e, user, gamma),
            Constraint::Power => e.power - self.p_max,
        }
    }

    /// Scale making constraint `k` dimensionless.
    pub fn scale(&self, k: usize) -> f64 {
        match self.constraints[k] {
            Constraint::Sinr { scale, .. } => scale,
            Constraint::Power => 1.0 / self.p_max,
        }
    }

    /// Constant term of the scaled constraint.
    pub fn scaled_offset(&self, k: usize) -> f64 {
        match self.constraints[k] {
            Constraint::Sinr { scale, .. } => scale * self.noise,
            Constraint::Power => -1.0,
        }
    }

    /// Trace constant `c_k` of the (unscaled) quadratic matrix of constraint `k`.
    pub fn trace(&self, k: usize) -> f64 {
        match self.constraints[k] {
            Constraint::Sinr { trace, .. } => trace,
            Constraint::Power => self.c_p,
        }
    }

    pub fn scaled_values(&self, e: &Eval) -> Vec<f64> {
        (0..self.constraints.len())
            .map(|k| self.scale(k) * self.constraint_value(e, k))
            .collect()
    }

    /// `xi_weight · Ξ_r d + Σ_k weights[k] · s_k Q_k d`, where `Q_k` is `Δ_m` or `Ω_p`
    /// and `s_k` the constraint scale.
    pub fn combine(&self, e: &Eval, xi_weight: f64, weights: &[f64]) -> CVector {
        let mut xi_coef = xi_weight;
        let m = self.n_users();
        // Row vectors r_m = Σ_n coef_n y_{m,n} f_n^H, accumulated per user.
        let mut rows = CMatrix::zeros(m, self.n_rf);
        let mut any_sinr = false;
        for (k, c) in self.constraints.iter().enumerate() {
            let wk = weights[k];
            if wk == 0.0 {
                continue;
            }
            match *c {
                Constraint::Power => xi_coef += wk / self.p_max,
                Constraint::Sinr { user, gamma, scale, .. } => {
                    any_sinr = true;
                    let s = wk * scale;
                    for n in 0..m {
                        let coef = if n == user { -s / gamma } else { s };
                        let yc = e.y[(user, n)] * coef;
                        for j in 0..self.n_rf {
                            rows[(user, j)] += yc * self.f_bb[(j, n)].conj();
                        }
                    }
                }
            }
        }
        let (nt, nrf) = (self.n_tx, self.n_rf);
        let mut out = CVector::zeros(nt * nrf);
        let o = out.as_mut_slice();
        let w = e.w.as_slice();
        let h = self.channels.as_slice();
        for j in 0..nrf {
            let oj = &mut o[j * nt..(j + 1) * nt];
            if xi_coef != 0.0 {
                for n in 0..m {
                    let c = self.f_bb[(j, n)].conj() * xi_coef;
                    for (acc, &x) in oj.iter_mut().zip(&w[n * nt..(n + 1) * nt]) {
                        *acc += x * c;
                    }
                }
            }
            if any_sinr {
                for u in 0..m {
                    let c = rows[(u, j)];
                    if c != Complex64::new(0.0, 0.0) {
                        for (acc, &x) in oj.iter_mut().zip(&h[u * nt..(u + 1) * nt]) {
                            *acc += x * c;
                        }
                    }
                }
            }
        }
        out
    }

    /// `Ξ_r d`.
    pub fn apply_xi(&self, e: &Eval) -> CVector {
        self.combine(e, 1.0, &vec![0.0; self.constraints.len()])
    }

    pub fn find_sinr(&self, user: usize) -> Option<usize> {
        self.constraints
            .iter()
            .position(|c| matches!(c, Constraint::Sinr { user: u, .. } if *u == user))
    }

    pub fn power_index(&self) -> usize {
        self.constraints.len() - 1
    }

    /// Dense `Ξ_r = T^T ⊗ I` (equal to `Ω_p`).
    pub fn xi_dense(&self) -> CMatrix {
        kron(&self.t.transpose(), &CMatrix::identity(self.n_tx, self.n_tx))
    }

    pub fn omega_p_dense(&self) -> CMatrix {
        self.xi_dense()
    }

    /// Dense `Υ_{n,m} = B_n^T ⊗ h_m h_m^H`.
    pub fn upsilon_dense(&self, n: usize, m: usize) -> CMatrix {
        let f = self.f_bb.column(n);
        let b = f * f.adjoint();
        let h = self.channels.column(m);
        let hm = h * h.adjoint();
        kron(&b.transpose(), &hm)
    }

    /// Dense `Δ_m` for a constrained user.
    pub fn delta_dense(&self, user: usize) -> Result<CMatrix> {
        let k = self
            .find_sinr(user)
            .ok_or_else(|| Error::Dimension(format!("user {user} has no SINR constraint")))?;
        let gamma = match self.constraints[k] {
            Constraint::Sinr { gamma, .. } => gamma,
            Constraint::Power => unreachable!(),
        };
        let dim = self.dim();
        let mut out = CMatrix::zeros(dim, dim);
        for n in 0..self.n_users() {
            let ups = self.upsilon_dense(n, user);
            if n == user {
                out -= ups * Complex64::from(1.0 / gamma);
            } else {
                out += ups;
            }
        }
        Ok(out)
    }
}

/// `d^H Ξ_r d − 2 Re(a_r^H d) + e_r`, evaluated as a Frobenius norm and clamped at 0.
pub fn eval_objective(q: &QuadraticForms, d: &[Complex64]) -> f64 {
    q.eval(d).objective.max(0.0)
}

/// `g_m(d) = d^H Δ_m d + N_o`.
pub fn eval_sinr_constraint(q: &QuadraticForms, d: &[Complex64], m: usize) -> Result<f64> {
    if m >= q.n_users() {
        return Err(Error::Dimension(format!("user index {m} out of range")));
    }
    let k = q
        .find_sinr(m)
        .ok_or_else(|| Error::Dimension(format!("user {m} has no SINR constraint")))?;
    Ok(q.constraint_value(&q.eval(d), k))
}

/// `ω_p(d) = d^H Ω_p d − P_max`.
pub fn eval_power_constraint(q: &QuadraticForms, d: &[Complex64]) -> f64 {
    q.eval(d).power - q.p_max
}

#[cfg(test)]
pub(crate) fn dense_quadratic(qm: &CMatrix, d: &[Complex64]) -> f64 {
    crate::linalg::quad_form(qm, d)
}
