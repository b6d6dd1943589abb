//! Baseband precoder update (a second-order cone program) and the Procrustes
//! update of the auxiliary matrix `U`.
//!
//! The cone program is reduced before solving. With `F_RF = U_a S V_a^H` and
//! `Y = S V_a^H F_BB`, the objective becomes `‖Y − U_a^H F_r U‖²` plus a
//! constant, the power constraint `‖Y‖ ≤ √P`, and the SINR cones only see the
//! component of `Y` inside the span `W` of the projected channels. The part of
//! `Y` orthogonal to `W` is optimally a nonnegative multiple of the matching
//! part of the target, leaving `Z = W^H Y` and one scalar as unknowns.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{frobenius_sq, CMatrix, ZERO};
use crate::model::RadarSpec;
use crate::socp::{project, Cone, SocpOptions};

#[derive(Clone, Debug)]
pub struct SocpInstance {
    /// User channels as columns, `N_t x M`.
    pub channels: CMatrix,
    /// `F_r U`, `N_t x M`.
    pub target: CMatrix,
    pub rf: CMatrix,
    /// SINR thresholds; entries `<= 0` impose no constraint.
    pub gamma: Vec<f64>,
    pub p_max: f64,
    pub noise: f64,
}

#[derive(Clone, Debug)]
pub struct BbSolution {
    pub f_bb: CMatrix,
    /// `‖F_RF F_BB − F_r U‖²`.
    pub objective: f64,
    pub kkt_residual: f64,
    pub newton_steps: usize,
}

/// Orthonormal basis of the column space of `k`, rank decided relative to the largest singular value.
fn range_basis(k: &CMatrix) -> CMatrix {
    let svd = k.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let keep: Vec<usize> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > 1e-12 * smax && s > 0.0)
        .map(|(i, _)| i)
        .collect();
    CMatrix::from_fn(k.nrows(), keep.len(), |i, j| u[(i, keep[j])])
}

/// Solves the baseband problem with each user's signal term oriented along
/// its phase at the unconstrained fit.
pub fn solve_bb(inst: &SocpInstance, tol: f64) -> Result<BbSolution> {
    solve_oriented(inst, &factor_rf(&inst.rf)?, tol, None)
}

/// Like [`solve_bb`], but also tries the orientation of `incumbent` and keeps
/// the better result. An incumbent that meets the constraints stays feasible,
/// so the objective never exceeds its value there.
pub fn solve_bb_from(inst: &SocpInstance, incumbent: &CMatrix, tol: f64) -> Result<BbSolution> {
    let fac = factor_rf(&inst.rf)?;
    let fit = solve_oriented(inst, &fac, tol, None);
    let inc = solve_oriented(inst, &fac, tol, Some(incumbent));
    match (fit, inc) {
        (Ok(a), Ok(b)) => Ok(if b.objective <= a.objective { b } else { a }),
        (Ok(a), Err(_)) => Ok(a),
        (Err(_), Ok(b)) => Ok(b),
        (Err(e), Err(_)) => Err(e),
    }
}

/// `F_RF = U_a S V_a^H`.
struct RfFactors {
    ua: CMatrix,
    sv: Vec<f64>,
    va_t: CMatrix,
}

fn factor_rf(rf: &CMatrix) -> Result<RfFactors> {
    if rf.is_square() && *rf == CMatrix::identity(rf.nrows(), rf.ncols()) {
        let n = rf.nrows();
        return Ok(RfFactors {
            ua: rf.clone(),
            sv: vec![1.0; n],
            va_t: rf.clone(),
        });
    }
    let svd = rf.clone().svd(true, true);
    let sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    if sv.iter().any(|&s| s <= 1e-12 * smax) {
        return Err(Error::Precondition("RF precoder is rank deficient".into()));
    }
    Ok(RfFactors {
        ua: svd.u.expect("u requested"),
        sv,
        va_t: svd.v_t.expect("v_t requested"),
    })
}

fn solve_oriented(inst: &SocpInstance, fac: &RfFactors, tol: f64, incumbent: Option<&CMatrix>) -> Result<BbSolution> {
    let n_tx = inst.rf.nrows();
    let n_rf = inst.rf.ncols();
    let m = inst.channels.ncols();
    if inst.channels.nrows() != n_tx || inst.target.nrows() != n_tx || inst.target.ncols() != m || inst.gamma.len() != m
    {
        return Err(Error::Dimension("baseband instance dimensions do not conform".into()));
    }
    if let Some(f) = incumbent {
        if f.nrows() != n_rf || f.ncols() != m {
            return Err(Error::Dimension("incumbent F_BB does not conform".into()));
        }
    }
    if !(inst.p_max > 0.0 && inst.noise > 0.0) {
        return Err(Error::Domain("p_max and noise must be positive".into()));
    }

    let (ua, sv, va_t) = (&fac.ua, &fac.sv, &fac.va_t);

    let c = ua.adjoint() * &inst.target;
    let inv_sqrt_no = 1.0 / inst.noise.sqrt();
    let k = ua.adjoint() * &inst.channels * Complex64::from(inv_sqrt_no);
    let w = range_basis(&k);
    let r = w.ncols();
    let kt = w.adjoint() * &k; // r x M, column m is W^H k_m
    let z0 = w.adjoint() * &c;
    let c_perp = &c - &w * &z0;
    let c_perp_norm = c_perp.norm();
    let reference = match incumbent {
        Some(f) => {
            let mut y = va_t * f;
            for i in 0..n_rf {
                for n in 0..m {
                    y[(i, n)] *= sv[i];
                }
            }
            w.adjoint() * y
        }
        None => z0.clone(),
    };

    // Real variables: (Re, Im) of Z column-major, then the scalar ρ.
    let nz = r * m;
    let nv = 2 * nz + 1;
    let zi = |i: usize, n: usize| 2 * (n * r + i);
    let mut x0 = DVector::zeros(nv);
    for n in 0..m {
        for i in 0..r {
            x0[zi(i, n)] = z0[(i, n)].re;
            x0[zi(i, n) + 1] = z0[(i, n)].im;
        }
    }
    x0[nv - 1] = c_perp_norm;

    let mut cones = Vec::with_capacity(m + 1);
    for (mm, &g) in inst.gamma.iter().enumerate() {
        if !(g > 0.0) {
            continue;
        }
        // rows: (Re t_{m,n}, Im t_{m,n}) for n = 1..M, then the constant 1
        let mut a = DMatrix::zeros(2 * m + 1, nv);
        let mut cvec = DVector::zeros(nv);
        let scale = (1.0 + 1.0 / g).sqrt();
        // Signal term measured along its phase at the reference point.
        let t0: Complex64 = (0..r).map(|i| kt[(i, mm)].conj() * reference[(i, mm)]).sum();
        let rot = if t0.norm() > 0.0 {
            t0 / t0.norm()
        } else {
            Complex64::new(1.0, 0.0)
        };
        for n in 0..m {
            for i in 0..r {
                let kv = kt[(i, mm)];
                // conj(k) z = (k_r x + k_i y) + j (k_r y − k_i x)
                a[(2 * n, zi(i, n))] = kv.re;
                a[(2 * n, zi(i, n) + 1)] = kv.im;
                a[(2 * n + 1, zi(i, n))] = -kv.im;
                a[(2 * n + 1, zi(i, n) + 1)] = kv.re;
                if n == mm {
                    let kr = kv * rot;
                    cvec[zi(i, n)] = scale * kr.re;
                    cvec[zi(i, n) + 1] = scale * kr.im;
                }
            }
        }
        let mut b = DVector::zeros(2 * m + 1);
        b[2 * m] = 1.0;
        cones.push(Cone { a, b, c: cvec, d: 0.0 });
    }
    cones.push(Cone {
        a: DMatrix::identity(nv, nv),
        b: DVector::zeros(nv),
        c: DVector::zeros(nv),
        d: inst.p_max.sqrt(),
    });

    let opts = SocpOptions {
        tol: 0.01 * tol.min(1e-8),
        ..Default::default()
    };
    let sol = project(&x0, &cones, &opts)?;

    let mut y = CMatrix::zeros(n_rf, m);
    for n in 0..m {
        for i in 0..r {
            let z = Complex64::new(sol.x[zi(i, n)], sol.x[zi(i, n) + 1]);
            for row in 0..n_rf {
                y[(row, n)] += w[(row, i)] * z;
            }
        }
    }
    let rho = sol.x[nv - 1].max(0.0);
    if c_perp_norm > 0.0 {
        y += &c_perp * Complex64::from(rho / c_perp_norm);
    }
    // F_BB = V_a S^{-1} Y
    let mut sy = y;
    for i in 0..n_rf {
        let s = Complex64::from(1.0 / sv[i]);
        for n in 0..m {
            sy[(i, n)] *= s;
        }
    }
    let f_bb = va_t.adjoint() * sy;
    let objective = frobenius_sq(&(&inst.rf * &f_bb - &inst.target));
    Ok(BbSolution {
        f_bb,
        objective,
        kkt_residual: sol.kkt_residual,
        newton_steps: sol.newton_steps,
    })
}

/// Phase rotation making the largest-magnitude entry of `v` real and positive.
fn canonical_phase(v: &[Complex64]) -> Complex64 {
    let mut best = ZERO;
    for &z in v {
        if z.norm() > best.norm() {
            best = z;
        }
    }
    if best == ZERO {
        Complex64::new(1.0, 0.0)
    } else {
        best.conj() / best.norm()
    }
}

/// Row-orthonormal `U` minimizing `‖F_RF F_BB − F_r U‖²`.
pub fn update_u(f_rf: &CMatrix, f_bb: &CMatrix, rs: &RadarSpec) -> Result<CMatrix> {
    let n_tar = rs.f_r.ncols();
    let m = f_bb.ncols();
    if n_tar > m || f_rf.ncols() != f_bb.nrows() || rs.f_r.nrows() != f_rf.nrows() {
        return Err(Error::Dimension(format!(
            "Procrustes needs N_tar <= M and conforming blocks (N_tar = {n_tar}, M = {m})"
        )));
    }
    procrustes(&(rs.f_r.adjoint() * (f_rf * f_bb)))
}

/// Row-orthonormal `U` (same shape as `a`) maximizing `Re tr(U^H a)`.
pub fn procrustes(a: &CMatrix) -> Result<CMatrix> {
    let (rows, cols) = a.shape();
    if rows > cols {
        return Err(Error::Dimension("Procrustes needs a wide matrix".into()));
    }
    let svd = a.clone().svd(true, true);
    let mut u = svd.u.expect("u requested");
    let mut v_t = svd.v_t.expect("v_t requested");
    for i in 0..u.ncols() {
        let col: Vec<Complex64> = u.column(i).iter().cloned().collect();
        let ph = canonical_phase(&col);
        for r in 0..u.nrows() {
            u[(r, i)] *= ph;
        }
        for c in 0..v_t.ncols() {
            v_t[(i, c)] *= ph.conj();
        }
    }
    Ok(u * v_t)
}
