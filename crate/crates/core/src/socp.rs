//! Small dense second-order cone solver for Euclidean projections:
//!
//! ```text
//! minimize ‖x − x0‖²  subject to  ‖A_i x + b_i‖ ≤ c_iᵀ x + d_i
//! ```
//!
//! Log-barrier path following with damped Newton centering; a phase-1 problem
//! with a shared slack finds a strictly feasible start or certifies that none
//! exists.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct Cone {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: DVector<f64>,
    pub d: f64,
}

impl Cone {
    /// `(c^T x + d, A x + b)`.
    fn parts(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        (self.c.dot(x) + self.d, &self.a * x + &self.b)
    }

    /// `c^T x + d − ‖A x + b‖`.
    pub fn margin(&self, x: &DVector<f64>) -> f64 {
        let (s, u) = self.parts(x);
        s - u.norm()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SocpOptions {
    /// Target duality gap (objective units).
    pub tol: f64,
    pub mu: f64,
    pub t0: f64,
    pub max_newton: usize,
    pub max_outer: usize,
}

impl Default for SocpOptions {
    fn default() -> Self {
        SocpOptions {
            tol: 1e-10,
            mu: 10.0,
            t0: 1.0,
            max_newton: 100,
            max_outer: 60,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SocpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    /// Worst of stationarity, complementarity and primal/dual infeasibility at
    /// multipliers recovered by least squares over the active cones.
    pub kkt_residual: f64,
    pub newton_steps: usize,
}

const BARRIER_DEGREE: f64 = 2.0;

/// Objective `w ‖x − x0‖² + l^T x` with a diagonal-free weight `w`.
struct Objective<'a> {
    weight: f64,
    x0: Option<&'a DVector<f64>>,
    linear: Option<&'a DVector<f64>>,
}

impl Objective<'_> {
    fn value(&self, x: &DVector<f64>) -> f64 {
        let mut v = 0.0;
        if let Some(x0) = self.x0 {
            v += self.weight * (x - x0).norm_squared();
        }
        if let Some(l) = self.linear {
            v += l.dot(x);
        }
        v
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(x.len());
        if let Some(x0) = self.x0 {
            g += (x - x0) * (2.0 * self.weight);
        }
        if let Some(l) = self.linear {
            g += l;
        }
        g
    }

    fn hessian_diag(&self) -> f64 {
        if self.x0.is_some() {
            2.0 * self.weight
        } else {
            0.0
        }
    }
}

fn strictly_feasible(cones: &[Cone], x: &DVector<f64>) -> bool {
    cones.iter().all(|k| {
        let (s, u) = k.parts(x);
        s > 0.0 && s * s - u.norm_squared() > 0.0
    })
}

fn barrier_value(cones: &[Cone], x: &DVector<f64>) -> f64 {
    cones
        .iter()
        .map(|k| {
            let (s, u) = k.parts(x);
            -(s * s - u.norm_squared()).ln()
        })
        .sum()
}

fn barrier_derivatives(cones: &[Cone], x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = x.len();
    let mut g = DVector::zeros(n);
    let mut h = DMatrix::zeros(n, n);
    for k in cones {
        let (s, u) = k.parts(x);
        let dd = s * s - u.norm_squared();
        // ∇D = 2 s c − 2 A^T u,  ∇²D = 2 c c^T − 2 A^T A
        let grad_d = &k.c * (2.0 * s) - k.a.transpose() * &u * 2.0;
        g -= &grad_d / dd;
        let cct = &k.c * k.c.transpose();
        let ata = k.a.transpose() * &k.a;
        h -= (cct - ata) * (2.0 / dd);
        h += &grad_d * grad_d.transpose() / (dd * dd);
    }
    (g, h)
}

fn solve_newton(h: &DMatrix<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
    let scale = h.diagonal().iter().fold(0.0f64, |a, &b| a.max(b.abs())).max(1e-300);
    let mut jitter = 0.0;
    for _ in 0..8 {
        let mut hh = h.clone();
        if jitter > 0.0 {
            for i in 0..hh.nrows() {
                hh[(i, i)] += jitter;
            }
        }
        if let Some(ch) = hh.cholesky() {
            return Some(-ch.solve(g));
        }
        jitter = if jitter == 0.0 { 1e-14 * scale } else { jitter * 100.0 };
    }
    None
}

struct Centered {
    x: DVector<f64>,
    steps: usize,
}

/// Damped Newton on `t·obj + barrier`. `stop` may end the loop early.
fn center<F>(
    obj: &Objective,
    cones: &[Cone],
    mut x: DVector<f64>,
    t: f64,
    opts: &SocpOptions,
    mut stop: F,
) -> Result<Centered>
where
    F: FnMut(&DVector<f64>) -> bool,
{
    let psi = |x: &DVector<f64>| t * obj.value(x) + barrier_value(cones, x);
    let mut steps = 0;
    for _ in 0..opts.max_newton {
        let (bg, mut h) = barrier_derivatives(cones, &x);
        let g = obj.gradient(&x) * t + bg;
        let hd = t * obj.hessian_diag();
        if hd != 0.0 {
            for i in 0..h.nrows() {
                h[(i, i)] += hd;
            }
        }
        let grad_norm = g.norm();
        let dx = solve_newton(&h, &g).ok_or_else(|| Error::Solver {
            msg: "singular Newton system".into(),
            residual: grad_norm,
        })?;
        let dec = -g.dot(&dx);
        if dec * 0.5 <= 1e-14 {
            break;
        }
        if dec < 0.25 {
            let cand = &x + &dx;
            if strictly_feasible(cones, &cand) {
                x = cand;
                steps += 1;
                if stop(&x) {
                    break;
                }
                continue;
            }
        }
        let f0 = psi(&x);
        let mut step = 1.0;
        let mut moved = false;
        for _ in 0..80 {
            let cand = &x + &dx * step;
            if strictly_feasible(cones, &cand) && psi(&cand) <= f0 - 0.25 * step * dec {
                x = cand;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        steps += 1;
        if !moved || stop(&x) {
            break;
        }
    }
    Ok(Centered { x, steps })
}

/// Strictly feasible point, or an infeasibility error.
pub fn find_interior(cones: &[Cone], n: usize, opts: &SocpOptions) -> Result<DVector<f64>> {
    let x_zero = DVector::zeros(n);
    if strictly_feasible(cones, &x_zero) {
        return Ok(x_zero);
    }
    // Append a slack σ entering every cone as `c^T x + d + σ`.
    let lifted: Vec<Cone> = cones
        .iter()
        .map(|k| {
            let mut a = DMatrix::zeros(k.a.nrows(), n + 1);
            a.view_mut((0, 0), (k.a.nrows(), n)).copy_from(&k.a);
            let mut c = DVector::zeros(n + 1);
            c.rows_mut(0, n).copy_from(&k.c);
            c[n] = 1.0;
            Cone {
                a,
                b: k.b.clone(),
                c,
                d: k.d,
            }
        })
        .collect();
    let sigma0 = cones.iter().map(|k| k.b.norm() - k.d).fold(0.0f64, f64::max) + 1.0;
    let mut x = DVector::zeros(n + 1);
    x[n] = sigma0;
    let mut linear = DVector::zeros(n + 1);
    linear[n] = 1.0;
    let obj = Objective {
        weight: 0.0,
        x0: None,
        linear: Some(&linear),
    };
    let degree = BARRIER_DEGREE * cones.len() as f64;
    let mut t = 1.0 / sigma0.max(1.0);
    for _ in 0..opts.max_outer {
        let c = center(&obj, &lifted, x, t, opts, |x| x[n] < 0.0)?;
        x = c.x;
        if x[n] < 0.0 {
            let out = x.rows(0, n).into_owned();
            if strictly_feasible(cones, &out) {
                return Ok(out);
            }
        }
        // σ* ≥ σ − degree / t on the central path.
        if x[n] - degree / t >= 0.0 || degree / t < 1e-12 * sigma0.max(1.0) {
            return Err(Error::Infeasible(format!(
                "no strictly feasible point (minimum slack {:e})",
                x[n]
            )));
        }
        t *= opts.mu;
    }
    Err(Error::Infeasible("phase 1 did not certify feasibility".into()))
}

/// Projection of `x0` onto the intersection of the cones.
pub fn project(x0: &DVector<f64>, cones: &[Cone], opts: &SocpOptions) -> Result<SocpSolution> {
    let n = x0.len();
    if strictly_feasible(cones, x0) {
        return Ok(SocpSolution {
            x: x0.clone(),
            objective: 0.0,
            kkt_residual: 0.0,
            newton_steps: 0,
        });
    }
    let mut x = find_interior(cones, n, opts)?;
    let obj = Objective {
        weight: 1.0,
        x0: Some(x0),
        linear: None,
    };
    let degree = BARRIER_DEGREE * cones.len() as f64;
    let mut t = opts.t0;
    let mut steps = 0;
    for _ in 0..opts.max_outer {
        let c = center(&obj, cones, x, t, opts, |_| false)?;
        x = c.x;
        steps += c.steps;
        if degree / t <= opts.tol {
            break;
        }
        t *= opts.mu;
    }
    let gap = degree / t;
    let kkt = kkt_residual(&x, x0, cones);
    if gap > opts.tol {
        return Err(Error::Solver {
            msg: "barrier method did not reach the target gap".into(),
            residual: kkt,
        });
    }
    Ok(SocpSolution {
        objective: (&x - x0).norm_squared(),
        x,
        kkt_residual: kkt,
        newton_steps: steps,
    })
}

/// KKT residual of the projection problem at `x`.
pub fn kkt_residual(x: &DVector<f64>, x0: &DVector<f64>, cones: &[Cone]) -> f64 {
    let grad = (x - x0) * 2.0;
    let mut primal = 0.0f64;
    let mut active = Vec::new();
    for cone in cones {
        let (s, u) = cone.parts(x);
        let margin = s - u.norm();
        primal = primal.max(-margin);
        if margin <= 1e-6 * (1.0 + s.abs()) && u.norm() > 0.0 {
            let g = cone.a.transpose() * (&u / u.norm()) - &cone.c;
            active.push((g, margin));
        }
    }
    if active.is_empty() {
        return primal.max(grad.norm());
    }
    let g = DMatrix::from_columns(&active.iter().map(|(g, _)| g.clone()).collect::<Vec<_>>());
    let z = match g.clone().svd(true, true).solve(&(-&grad), 1e-14) {
        Ok(z) => z,
        Err(_) => return f64::INFINITY,
    };
    let stationarity = (&grad + &g * &z).norm();
    let mut worst = primal.max(stationarity);
    for (zi, (_, margin)) in z.iter().zip(&active) {
        worst = worst.max(-zi).max((zi * margin).abs());
    }
    worst
}
