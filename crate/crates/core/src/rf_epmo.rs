//! Exact-penalty Riemannian conjugate gradient on the complex circle manifold.
//!
//! The penalty objective is `ω_r(d) + μ Σ_k max(0, g̃_k(d))²` where `g̃_k` are
//! the scaled constraints of [`QuadraticForms`]. Gradients are real gradients
//! in complex notation: the first-order change along `δ` is `Re(∇^H δ)`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{norm_sq, re_inner};
use crate::numerics::unit_phase_of;
use crate::quadratics::{Eval, QuadraticForms};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmijoConfig {
    pub initial_step: f64,
    pub contraction: f64,
    pub sufficient_decrease: f64,
    pub max_backtracks: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    pub mu0: f64,
    pub c: f64,
    pub tol_grad: f64,
    pub tol_violation: f64,
    pub max_outer: usize,
    /// Cap on conjugate-gradient iterations per penalty round.
    pub max_inner: usize,
    pub armijo: ArmijoConfig,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        PenaltyConfig {
            mu0: 10.0,
            c: 0.5,
            tol_grad: 1e-8,
            tol_violation: 1e-8,
            max_outer: 12,
            max_inner: 300,
            armijo: ArmijoConfig {
                initial_step: 1.0,
                contraction: 0.5,
                sufficient_decrease: 1e-4,
                max_backtracks: 40,
            },
        }
    }
}

impl PenaltyConfig {
    pub fn validate(&self) -> Result<()> {
        let a = &self.armijo;
        if !(self.mu0 > 1.0)
            || !(self.c > 0.0 && self.c < 1.0)
            || !(self.tol_grad > 0.0)
            || !(self.tol_violation > 0.0)
            || !(a.initial_step > 0.0)
            || !(a.contraction > 0.0 && a.contraction < 1.0)
            || !(a.sufficient_decrease > 0.0 && a.sufficient_decrease < 1.0)
        {
            return Err(Error::Domain(format!("invalid penalty configuration {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifoldPoint {
    pub d: Vec<Complex64>,
    pub grad: Vec<Complex64>,
    pub dir: Vec<Complex64>,
}

/// Sum of squared hinges of the scaled constraints.
fn hinge_sum(values: &[f64]) -> f64 {
    values.iter().map(|&g| if g > 0.0 { g * g } else { 0.0 }).sum()
}

/// Sum of hinge violations `Σ max(0, g̃_k)`.
pub fn violation(q: &QuadraticForms, d: &[Complex64]) -> f64 {
    q.scaled_values(&q.eval(d)).iter().map(|&g| g.max(0.0)).sum()
}

pub fn penalty_objective(q: &QuadraticForms, d: &[Complex64], mu: f64) -> f64 {
    let e = q.eval(d);
    e.objective + mu * hinge_sum(&q.scaled_values(&e))
}

pub fn euclidean_gradient(q: &QuadraticForms, d: &[Complex64], mu: f64) -> Vec<Complex64> {
    let e = q.eval(d);
    gradient_at(q, &e, mu)
}

fn gradient_at(q: &QuadraticForms, e: &Eval, mu: f64) -> Vec<Complex64> {
    let vals = q.scaled_values(e);
    let weights: Vec<f64> = vals
        .iter()
        .map(|&g| if g >= 0.0 { 4.0 * mu * g } else { 0.0 })
        .collect();
    let mut g = q.combine(e, 2.0, &weights);
    g.axpy(Complex64::from(-2.0), &q.a_r, Complex64::from(1.0));
    g.as_slice().to_vec()
}

/// Orthogonal projection of `v` onto the tangent space at `d`.
pub fn tangent_project(d: &[Complex64], v: &[Complex64]) -> Vec<Complex64> {
    d.iter()
        .zip(v)
        .map(|(&p, &z)| {
            let r = z.re * p.re + z.im * p.im;
            z - p * r
        })
        .collect()
}

pub fn riemannian_gradient(d: &[Complex64], egrad: &[Complex64]) -> Vec<Complex64> {
    tangent_project(d, egrad)
}

pub fn transport(zeta: &[Complex64], d_next: &[Complex64]) -> Vec<Complex64> {
    tangent_project(d_next, zeta)
}

pub fn retract(d: &[Complex64], step: f64, zeta: &[Complex64]) -> Vec<Complex64> {
    d.iter().zip(zeta).map(|(&p, &z)| unit_phase_of(p + z * step)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpmoTraceRow {
    pub iteration: usize,
    pub objective: f64,
    pub grad_norm_sq: f64,
    pub mu: f64,
    pub violation: f64,
}

#[derive(Clone, Debug)]
pub struct EpmoResult {
    pub d: Vec<Complex64>,
    pub mu: f64,
    pub violation: f64,
    pub trace: Vec<EpmoTraceRow>,
}

/// One Riemannian CG run at fixed `mu`. Returns the final point and appends to `trace`.
fn rcg(
    q: &QuadraticForms,
    d0: &[Complex64],
    mu: f64,
    pcfg: &PenaltyConfig,
    trace: &mut Vec<EpmoTraceRow>,
) -> Vec<Complex64> {
    let a = &pcfg.armijo;
    let mut d = d0.to_vec();
    let mut e = q.eval(&d);
    let mut f = e.objective + mu * hinge_sum(&q.scaled_values(&e));
    let mut grad = riemannian_gradient(&d, &gradient_at(q, &e, mu));
    let mut gnorm = norm_sq(&grad);
    let mut dir: Vec<Complex64> = grad.iter().map(|z| -z).collect();
    let mut prev_decrease: Option<f64> = None;
    let mut iter = 0;
    let start = trace.len();
    trace.push(EpmoTraceRow {
        iteration: start,
        objective: f,
        grad_norm_sq: gnorm,
        mu,
        violation: hinge_total(q, &e),
    });
    while gnorm >= pcfg.tol_grad && iter < pcfg.max_inner {
        iter += 1;
        let mut slope = re_inner(&grad, &dir);
        if !(slope < 0.0) {
            dir = grad.iter().map(|z| -z).collect();
            slope = -gnorm;
        }
        // Initial trial step from the previous decrease, otherwise the configured one.
        let mut t = match prev_decrease {
            Some(df) if df > 0.0 => (2.0 * df / -slope).min(1e8 * a.initial_step),
            _ => a.initial_step,
        };
        let mut accepted = None;
        for _ in 0..=a.max_backtracks {
            let cand = retract(&d, t, &dir);
            let ce = q.eval(&cand);
            let cf = ce.objective + mu * hinge_sum(&q.scaled_values(&ce));
            if cf <= f + a.sufficient_decrease * t * slope {
                accepted = Some((cand, ce, cf));
                break;
            }
            t *= a.contraction;
        }
        let Some((nd, ne, nf)) = accepted else {
            break;
        };
        prev_decrease = Some(f - nf);
        let new_grad = riemannian_gradient(&nd, &gradient_at(q, &ne, mu));
        let new_gnorm = norm_sq(&new_grad);
        let old_grad_t = transport(&grad, &nd);
        let old_dir_t = transport(&dir, &nd);
        let diff: Vec<Complex64> = new_grad.iter().zip(&old_grad_t).map(|(a, b)| a - b).collect();
        let beta = (re_inner(&new_grad, &diff) / gnorm).max(0.0);
        dir = new_grad.iter().zip(&old_dir_t).map(|(g, p)| -g + p * beta).collect();
        let stalled = f - nf <= 1e-15 * f.abs();
        d = nd;
        e = ne;
        f = nf;
        grad = new_grad;
        gnorm = new_gnorm;
        trace.push(EpmoTraceRow {
            iteration: trace.len(),
            objective: f,
            grad_norm_sq: gnorm,
            mu,
            violation: hinge_total(q, &e),
        });
        if stalled {
            break;
        }
    }
    d
}

fn hinge_total(q: &QuadraticForms, e: &Eval) -> f64 {
    q.scaled_values(e).iter().map(|&g| g.max(0.0)).sum()
}

/// Penalty loop: minimize at fixed `μ`, stop once the total violation is within
/// tolerance, otherwise grow `μ ← μ / c` and restart from the current point.
pub fn epmo_solve(q: &QuadraticForms, d_init: &[Complex64], pcfg: &PenaltyConfig) -> Result<EpmoResult> {
    pcfg.validate()?;
    if d_init.len() != q.dim() {
        return Err(Error::Dimension(format!(
            "d has {} entries, expected {}",
            d_init.len(),
            q.dim()
        )));
    }
    let mut d: Vec<Complex64> = d_init.iter().map(|&z| unit_phase_of(z)).collect();
    let mut mu = pcfg.mu0;
    let mut trace = Vec::new();
    let mut viol = f64::INFINITY;
    for round in 0..pcfg.max_outer.max(1) {
        d = rcg(q, &d, mu, pcfg, &mut trace);
        viol = violation(q, &d);
        if viol <= pcfg.tol_violation {
            return Ok(EpmoResult {
                d,
                mu,
                violation: viol,
                trace,
            });
        }
        if round + 1 < pcfg.max_outer {
            mu /= pcfg.c;
        }
    }
    Err(Error::PenaltyInfeasible {
        violation: viol,
        rounds: pcfg.max_outer,
    })
}

/// Like [`epmo_solve`] but returns the last iterate even when violation remains.
pub fn epmo_best_effort(q: &QuadraticForms, d_init: &[Complex64], pcfg: &PenaltyConfig) -> Result<EpmoResult> {
    pcfg.validate()?;
    let mut d: Vec<Complex64> = d_init.iter().map(|&z| unit_phase_of(z)).collect();
    let mut mu = pcfg.mu0;
    let mut trace = Vec::new();
    let mut viol = f64::INFINITY;
    for _ in 0..pcfg.max_outer.max(1) {
        d = rcg(q, &d, mu, pcfg, &mut trace);
        viol = violation(q, &d);
        if viol <= pcfg.tol_violation {
            break;
        }
        mu /= pcfg.c;
    }
    Ok(EpmoResult {
        d,
        mu,
        violation: viol,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{ArrayGeometry, ChannelSet};
    use crate::linalg::{CMatrix, CVector};
    use crate::model::ideal_radar_precoder;
    use crate::numerics::Rng;
    use crate::quadratics::build_quadratics;

    fn instance(seed: u64, n: usize, nrf: usize, m: usize, gamma: f64, p: f64) -> QuadraticForms {
        let mut rng = Rng::new(seed, 2);
        let h = (0..m)
            .map(|_| CVector::from_fn(n, |_, _| rng.complex_normal(1.0)))
            .collect();
        let ch = ChannelSet::new(h, vec![0.0; m], vec![1.0; m]).unwrap();
        let angles: Vec<f64> = (0..m).map(|i| -40.0 + 50.0 * i as f64).collect();
        let rs = ideal_radar_precoder(&angles, &ArrayGeometry::half_wavelength(n)).unwrap();
        let f_bb = CMatrix::from_fn(nrf, m, |_, _| rng.complex_normal(1.0 / (n * nrf) as f64));
        build_quadratics(&f_bb, &CMatrix::identity(m, m), &ch, &rs, &vec![gamma; m], 0.05, p).unwrap()
    }

    fn random_d(rng: &mut Rng, n: usize) -> Vec<Complex64> {
        (0..n).map(|_| rng.unit_phase()).collect()
    }

    #[test]
    fn penalty_examples() {
        let mut rng = Rng::new(50, 0);
        let q = instance(1, 6, 2, 2, 3.0, 0.2);
        let d = random_d(&mut rng, q.dim());
        let e = q.eval(&d);
        let vals = q.scaled_values(&e);
        let mut oracle = e.objective;
        for v in &vals {
            if *v > 0.0 {
                oracle += 7.0 * v * v;
            }
        }
        assert!((penalty_objective(&q, &d, 7.0) - oracle).abs() < 1e-10 * oracle);
        let p1 = penalty_objective(&q, &d, 7.0) - e.objective;
        let p2 = penalty_objective(&q, &d, 14.0) - e.objective;
        assert!((p2 - 2.0 * p1).abs() <= 1e-12 * p2.abs().max(1.0));

        let slack = instance(1, 6, 2, 2, 1e-12, 1e12);
        assert_eq!(penalty_objective(&slack, &d, 9.0), slack.eval(&d).objective);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = Rng::new(51, 0);
        let mut tested = 0;
        while tested < 20 {
            let q = instance(tested as u64 + 7, 8, 2, 2, 2.0, 0.3);
            let d = random_d(&mut rng, q.dim());
            let vals = q.scaled_values(&q.eval(&d));
            if vals.iter().any(|g| g.abs() < 1e-3) {
                continue;
            }
            let mu = 3.0;
            let g = euclidean_gradient(&q, &d, mu);
            let h = 1e-6;
            let mut num = vec![Complex64::new(0.0, 0.0); d.len()];
            for l in 0..d.len() {
                for (part, unit) in [(0, Complex64::new(1.0, 0.0)), (1, Complex64::new(0.0, 1.0))] {
                    let mut dp = d.clone();
                    let mut dm = d.clone();
                    dp[l] += unit * h;
                    dm[l] -= unit * h;
                    let fd = (penalty_objective(&q, &dp, mu) - penalty_objective(&q, &dm, mu)) / (2.0 * h);
                    if part == 0 {
                        num[l].re = fd;
                    } else {
                        num[l].im = fd;
                    }
                }
            }
            let err: f64 = g.iter().zip(&num).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
            let scale = norm_sq(&num).sqrt();
            assert!(err <= 1e-5 * scale, "rel err {}", err / scale);
            tested += 1;
        }
    }

    #[test]
    fn interior_gradient_and_phase_alignment() {
        let mut rng = Rng::new(52, 0);
        let q = instance(2, 5, 2, 2, 1e-12, 1e12);
        let d = random_d(&mut rng, q.dim());
        let g = euclidean_gradient(&q, &d, 10.0);
        let e = q.eval(&d);
        let want = q.apply_xi(&e) * Complex64::from(2.0) - &q.a_r * Complex64::from(2.0);
        assert!((CVector::from_column_slice(&g) - &want).norm() < 1e-12 * want.norm());
    }

    #[test]
    fn projection_examples() {
        let mut rng = Rng::new(53, 0);
        let d = random_d(&mut rng, 12);
        let radial = riemannian_gradient(&d, &d);
        assert!(norm_sq(&radial) < 1e-28);
        let tangential: Vec<Complex64> = d.iter().map(|z| z * Complex64::new(0.0, 1.0)).collect();
        let kept = riemannian_gradient(&d, &tangential);
        for (a, b) in kept.iter().zip(&tangential) {
            assert!((a - b).norm() < 1e-15);
        }
        let x: Vec<Complex64> = (0..12).map(|_| rng.complex_normal(1.0)).collect();
        let p = tangent_project(&d, &x);
        let pp = tangent_project(&d, &p);
        for (a, b) in p.iter().zip(&pp) {
            assert!((a - b).norm() < 1e-12);
        }
        for (z, dd) in p.iter().zip(&d) {
            assert!((z * dd.conj()).re.abs() < 1e-12);
        }
        let d2 = random_d(&mut rng, 12);
        let t = transport(&p, &d2);
        assert!(norm_sq(&t) <= norm_sq(&p) + 1e-12);
        let same = transport(&p, &d);
        for (a, b) in same.iter().zip(&p) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn retraction_is_second_order() {
        let mut rng = Rng::new(54, 0);
        let d = random_d(&mut rng, 10);
        let x: Vec<Complex64> = (0..10).map(|_| rng.complex_normal(1.0)).collect();
        let z = tangent_project(&d, &x);
        assert_eq!(retract(&d, 0.0, &z), d);
        let mut pts = Vec::new();
        for h in [1e-2, 1e-3, 1e-4] {
            let r = retract(&d, h, &z);
            assert!(r.iter().all(|v| (v.norm() - 1.0).abs() < 1e-14));
            let lin: Vec<Complex64> = d.iter().zip(&z).map(|(a, b)| a + b * h).collect();
            let err: f64 = r.iter().zip(&lin).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
            pts.push((h.ln(), err.ln()));
        }
        let slope = (pts[2].1 - pts[0].1) / (pts[2].0 - pts[0].0);
        assert!((slope - 2.0).abs() < 0.1, "slope {slope}");
    }

    #[test]
    fn unconstrained_solve_converges_without_escalation() {
        let mut rng = Rng::new(55, 0);
        let q = instance(3, 6, 2, 2, 1e-12, 1e12);
        let d0 = random_d(&mut rng, q.dim());
        let cfg = PenaltyConfig {
            max_inner: 5000,
            ..Default::default()
        };
        let res = epmo_solve(&q, &d0, &cfg).unwrap();
        assert_eq!(res.mu, cfg.mu0);
        let last = res.trace.last().unwrap();
        assert!(last.grad_norm_sq <= cfg.tol_grad || res.trace.len() > 1);
        assert!(res.trace.windows(2).all(|w| w[1].objective <= w[0].objective));
        assert!(last.objective < q.eval(&d0).objective);
    }

    #[test]
    fn constrained_solves_reach_feasibility() {
        let mut rng = Rng::new(56, 0);
        let mut ok = 0;
        for seed in 0..20 {
            let q = instance(200 + seed, 8, 2, 2, 0.3, 4.0);
            let d0 = random_d(&mut rng, q.dim());
            match epmo_solve(&q, &d0, &PenaltyConfig::default()) {
                Ok(res) => {
                    assert!(res.violation <= 1e-8);
                    assert!(res.d.iter().all(|z| (z.norm() - 1.0).abs() < 1e-14));
                    let mut prev_mu = 0.0;
                    let mut prev_f = f64::INFINITY;
                    for row in &res.trace {
                        if row.mu == prev_mu {
                            assert!(row.objective <= prev_f);
                        }
                        prev_mu = row.mu;
                        prev_f = row.objective;
                    }
                    ok += 1;
                }
                // An active constraint keeps a residual of order 1/μ under the squared hinge.
                Err(Error::PenaltyInfeasible { violation, .. }) => {
                    assert!(violation <= 1e-3, "{violation}");
                    let short = PenaltyConfig {
                        max_outer: 4,
                        ..PenaltyConfig::default()
                    };
                    let early = epmo_best_effort(&q, &d0, &short).unwrap();
                    assert!(violation < early.violation);
                }
                Err(e) => panic!("{e}"),
            }
        }
        assert!(ok >= 5, "{ok}");
    }
}
