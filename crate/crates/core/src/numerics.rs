//! Scalar special functions, bracketed root finding, unit-modulus projection
//! and the deterministic random source shared by the solvers.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use num_complex::Complex64;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Deterministic random stream keyed by `(seed, stream_id)`.
///
/// Backed by a ChaCha8 block cipher in counter mode: the seed selects the key
/// and the stream id selects the nonce, so every trial draws from an
/// independent sequence no matter which thread runs it.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        Rng { seed, stream_id, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Uniform sample on `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.inner.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Circularly-symmetric complex Gaussian with total variance `var`.
    pub fn complex_normal(&mut self, var: f64) -> Complex64 {
        let s = (var / 2.0).sqrt();
        Complex64::new(s * self.standard_normal(), s * self.standard_normal())
    }

    /// Zero-mean Laplace sample with the given scale parameter `b`
    /// (standard deviation `b * sqrt(2)`).
    pub fn laplace(&mut self, b: f64) -> f64 {
        loop {
            let u = self.inner.random::<f64>() - 0.5;
            if u != -0.5 {
                return -b * u.signum() * (1.0 - 2.0 * u.abs()).ln();
            }
        }
    }

    pub fn unit_phase(&mut self) -> Complex64 {
        Complex64::from_polar(1.0, self.uniform(-PI, PI))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RootBracket {
    pub lo: f64,
    pub hi: f64,
    pub tol: f64,
}

impl RootBracket {
    pub fn new(lo: f64, hi: f64, tol: f64) -> Result<Self> {
        if !(lo < hi) || !(tol > 0.0) {
            return Err(Error::Domain(format!(
                "bracket requires lo < hi and tol > 0 (got [{lo}, {hi}], tol {tol})"
            )));
        }
        Ok(RootBracket { lo, hi, tol })
    }
}

/// Complementary error function.
pub fn erfc(x: f64) -> f64 {
    libm::erfc(x)
}

/// Gaussian tail probability `Q(x) = P(Z > x)`.
pub fn q_function(x: f64) -> f64 {
    0.5 * erfc(x * FRAC_1_SQRT_2)
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Inverse of the Gaussian Q-function.
///
/// A rational tail approximation seeds Halley iterations on `Q(x) - p`; the
/// result is accurate to well below 1e-10 absolute on all of `(0, 1)`.
pub fn inv_q(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("inv_q needs p in (0,1), got {p}")));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    if p > 0.5 {
        return inv_q(1.0 - p).map(|x| -x);
    }
    let t = (-2.0 * p.ln()).sqrt();
    let num = 2.515517 + 0.802853 * t + 0.010328 * t * t;
    let den = 1.0 + 1.432788 * t + 0.189269 * t * t + 0.001308 * t * t * t;
    let mut x = t - num / den;
    for _ in 0..8 {
        let pdf = std_normal_pdf(x);
        if pdf == 0.0 {
            break;
        }
        // Q'(x) = -pdf(x), Q''(x) = x pdf(x)
        let r = (q_function(x) - p) / pdf;
        let step = r / (1.0 + 0.5 * x * r);
        x += step;
        if step.abs() <= 1e-15 * x.abs().max(1.0) {
            break;
        }
    }
    Ok(x)
}

/// Bisection on a sign-changing bracket down to interval width `tol`.
pub fn bracketed_root<F>(mut f: F, bracket: RootBracket) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    let RootBracket { mut lo, mut hi, tol } = bracket;
    let mut f_lo = f(lo);
    let f_hi = f(hi);
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if f_lo.signum() == f_hi.signum() || f_lo.is_nan() || f_hi.is_nan() {
        return Err(Error::Bracket { lo, hi });
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let f_mid = f(mid);
        if f_mid == 0.0 {
            return Ok(mid);
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Unit-modulus projection of a single entry; zero maps to `1 + 0j`.
#[inline]
pub fn unit_phase_of(z: Complex64) -> Complex64 {
    let s = z.norm_sqr();
    let r = if s.is_normal() && s.is_finite() {
        s.sqrt()
    } else {
        z.norm()
    };
    if r == 0.0 || !r.is_finite() {
        Complex64::new(1.0, 0.0)
    } else if (r - 1.0).abs() <= 4.0 * f64::EPSILON {
        z
    } else {
        z / r
    }
}

/// Entrywise `exp(j arg(v))`.
pub fn phase_project(v: &[Complex64]) -> Vec<Complex64> {
    v.iter().map(|&z| unit_phase_of(z)).collect()
}
