//! Finite-blocklength feasibility: SINR thresholds for a rate target and
//! integer block-length allocation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::dispersion;
use crate::numerics::{bracketed_root, inv_q, RootBracket};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaThreshold {
    pub gamma_min: f64,
    pub kappa: f64,
    pub tau: f64,
    pub delta: f64,
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps < 0.5) {
        return Err(Error::Domain(format!(
            "error probability must lie in (0, 0.5), got {eps}"
        )));
    }
    Ok(())
}

/// `e^κ (κ² − 4τ²) + 4δ²τ²`.
pub fn threshold_equation(kappa: f64, tau: f64, delta: f64) -> f64 {
    kappa.exp() * (kappa * kappa - 4.0 * tau * tau) + 4.0 * delta * delta * tau * tau
}

/// Smallest SINR whose finite-blocklength rate at `beta` reaches `target` nats.
pub fn solve_gamma_threshold(target: f64, beta: f64, eps: f64) -> Result<GammaThreshold> {
    if !(target >= 0.0 && target.is_finite()) {
        return Err(Error::Domain(format!(
            "rate target must be finite and >= 0, got {target}"
        )));
    }
    if !(beta >= 1.0) {
        return Err(Error::Domain(format!("block length must be >= 1, got {beta}")));
    }
    check_eps(eps)?;
    let tau = inv_q(eps)? / beta.sqrt();
    let delta = (-target).exp();
    let kappa = if target == 0.0 {
        0.0
    } else {
        let bracket = RootBracket::new(0.0, 2.0 * tau, 1e-12_f64.min(tau * 1e-12))?;
        bracketed_root(|k| threshold_equation(k, tau, delta), bracket)?
    };
    Ok(GammaThreshold {
        gamma_min: (target + 0.5 * kappa).exp_m1(),
        kappa,
        tau,
        delta,
    })
}

/// Real-valued block length at which the rate at SINR `gamma` equals `target`.
pub fn min_blocklength(gamma: f64, target: f64, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    if !(gamma >= 0.0) {
        return Err(Error::Domain(format!("SINR must be nonnegative, got {gamma}")));
    }
    if gamma == 0.0 && target <= 0.0 {
        return Ok(0.0);
    }
    let gap = gamma.ln_1p() - target;
    if !(gap > 0.0) {
        return Err(Error::Infeasible(format!(
            "SINR {gamma} cannot carry {target} nats at any block length"
        )));
    }
    let s = dispersion(gamma)?.sqrt() * inv_q(eps)? / gap;
    Ok(s * s)
}

/// Integer block lengths summing to `frame` with every user meeting `η_m R`.
pub fn allocate_blocklengths(gammas: &[f64], rate: f64, eta: &[f64], eps: &[f64], frame: usize) -> Result<Vec<usize>> {
    let m = gammas.len();
    if eta.len() != m || eps.len() != m {
        return Err(Error::Dimension("gammas, eta and eps differ in length".into()));
    }
    if frame < m {
        return Err(Error::Domain(format!("frame {frame} shorter than user count {m}")));
    }
    let lower = (0..m)
        .map(|i| min_blocklength(gammas[i], eta[i] * rate, eps[i]))
        .collect::<Result<Vec<_>>>()?;
    let mut beta = Vec::with_capacity(m);
    for &l in &lower {
        if !(l <= frame as f64) {
            return Err(Error::Infeasible(format!("block length {l} exceeds frame {frame}")));
        }
        beta.push((l.ceil() as usize).max(1));
    }
    let used: usize = beta.iter().sum();
    if used > frame {
        return Err(Error::Infeasible(format!(
            "block lengths need {used} symbols, frame has {frame}"
        )));
    }
    for _ in 0..frame - used {
        let mut best = 0;
        let mut best_ratio = f64::INFINITY;
        for i in 0..m {
            let ratio = if lower[i] > 0.0 {
                beta[i] as f64 / lower[i]
            } else {
                f64::INFINITY
            };
            if ratio < best_ratio {
                best_ratio = ratio;
                best = i;
            }
        }
        beta[best] += 1;
    }
    Ok(beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fbl_rate;
    use crate::numerics::Rng;

    #[test]
    fn zero_target_gives_zero_threshold() {
        let g = solve_gamma_threshold(0.0, 128.0, 1e-5).unwrap();
        assert_eq!(g.kappa, 0.0);
        assert_eq!(g.gamma_min, 0.0);
        assert!((threshold_equation(0.0, g.tau, 1.0)).abs() < 1e-15);
    }

    #[test]
    fn large_blocklength_approaches_shannon_threshold() {
        let g = solve_gamma_threshold(1.5, 1e14, 1e-5).unwrap();
        assert!((g.gamma_min - 1.5f64.exp_m1()).abs() < 1e-5);
    }

    #[test]
    fn round_trip_against_direct_rate_bisection() {
        let (target, beta, eps) = (1.0, 128.0, 1e-5);
        let g = solve_gamma_threshold(target, beta, eps).unwrap();
        let mut lo = target.exp_m1();
        let mut hi = (target + 2.0 * g.tau).exp() * 10.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if fbl_rate(mid, beta, eps).unwrap() < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let oracle = 0.5 * (lo + hi);
        assert!((g.gamma_min - oracle).abs() <= 1e-8 * oracle);
        assert!((fbl_rate(g.gamma_min, beta, eps).unwrap() - target).abs() <= 1e-8);
        assert!(g.kappa >= 0.0 && g.kappa < 2.0 * g.tau);
    }

    #[test]
    fn round_trip_random() {
        let mut rng = Rng::new(21, 0);
        for _ in 0..1000 {
            let target = rng.uniform(0.01, 5.0);
            let beta = rng.uniform(16.0, 4096.0).round();
            let eps = 10f64.powf(rng.uniform(-9.0, -3.0));
            let g = solve_gamma_threshold(target, beta, eps).unwrap();
            let r = fbl_rate(g.gamma_min, beta, eps).unwrap();
            assert!((r - target).abs() <= 1e-8, "{target} {beta} {eps}: {r}");
        }
    }

    #[test]
    fn single_sign_change_on_bracket() {
        let mut rng = Rng::new(22, 0);
        for _ in 0..20 {
            let target = rng.uniform(0.01, 5.0);
            let beta = rng.uniform(16.0, 4096.0).round();
            let eps = 10f64.powf(rng.uniform(-9.0, -3.0));
            let tau = inv_q(eps).unwrap() / beta.sqrt();
            let delta = (-target).exp();
            let n = 10_000;
            let mut changes = 0;
            let mut prev = threshold_equation(0.0, tau, delta).signum();
            for i in 1..=n {
                let s = threshold_equation(2.0 * tau * i as f64 / n as f64, tau, delta).signum();
                if s != prev && s != 0.0 {
                    changes += 1;
                    prev = s;
                }
            }
            assert_eq!(changes, 1);
        }
    }

    #[test]
    fn rejects_bad_eps() {
        assert!(solve_gamma_threshold(1.0, 10.0, 0.5).is_err());
        assert!(solve_gamma_threshold(1.0, 10.0, 0.0).is_err());
        assert!(solve_gamma_threshold(-1.0, 10.0, 1e-5).is_err());
    }

    #[test]
    fn min_blocklength_examples() {
        assert_eq!(min_blocklength(0.0, 0.0, 1e-5).unwrap(), 0.0);
        let r = fbl_rate(10.0, 128.0, 1e-5).unwrap();
        assert!((min_blocklength(10.0, r, 1e-5).unwrap() - 128.0).abs() < 1e-8);
        assert!((min_blocklength(10.0, 2.0226, 1e-5).unwrap() - 128.0).abs() < 0.2);
        assert!(min_blocklength(10.0, 11f64.ln(), 1e-5).unwrap_err().is_infeasible());
    }

    #[test]
    fn allocation_remainder_rule() {
        // Lower bounds (100.2, 120.7) realised through the allocator's own arithmetic.
        let eps = [1e-5, 1e-5];
        let eta = [0.5, 0.5];
        let rate = 2.0;
        let find_gamma = |lb: f64| {
            let (mut lo, mut hi) = (1.0f64.exp_m1() + 1e-9, 1e6);
            for _ in 0..300 {
                let mid = 0.5 * (lo + hi);
                if min_blocklength(mid, 1.0, 1e-5).unwrap() > lb {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        };
        let g = [find_gamma(100.2), find_gamma(120.7)];
        let b = allocate_blocklengths(&g, rate, &eta, &eps, 256).unwrap();
        assert_eq!(b.iter().sum::<usize>(), 256);
        assert!(b[0] >= 101 && b[1] >= 121);
        // Replay the stated rule by hand.
        let lb: Vec<f64> = g.iter().map(|&x| min_blocklength(x, 1.0, 1e-5).unwrap()).collect();
        let mut want = vec![101usize, 121];
        for _ in 0..34 {
            let r0 = want[0] as f64 / lb[0];
            let r1 = want[1] as f64 / lb[1];
            if r1 < r0 {
                want[1] += 1;
            } else {
                want[0] += 1;
            }
        }
        assert_eq!(b, want);
        for i in 0..2 {
            assert!(fbl_rate(g[i], b[i] as f64, eps[i]).unwrap() >= eta[i] * rate - 1e-12);
        }

        let g = [find_gamma(200.0), find_gamma(200.0)];
        assert!(allocate_blocklengths(&g, rate, &eta, &eps, 256)
            .unwrap_err()
            .is_infeasible());
    }

    #[test]
    fn allocation_properties() {
        let mut rng = Rng::new(23, 0);
        for _ in 0..500 {
            let m = 1 + (rng.uniform(0.0, 3.0) as usize);
            let gammas: Vec<f64> = (0..m).map(|_| 10f64.powf(rng.uniform(-1.0, 3.0))).collect();
            let eta = vec![1.0 / m as f64; m];
            let eps = vec![1e-5; m];
            let rate = rng.uniform(0.0, 6.0);
            let frame = 32 + rng.uniform(0.0, 500.0) as usize;
            match allocate_blocklengths(&gammas, rate, &eta, &eps, frame) {
                Ok(b) => {
                    assert_eq!(b.iter().sum::<usize>(), frame);
                    for i in 0..m {
                        assert!(b[i] >= 1);
                        let r = fbl_rate(gammas[i], b[i] as f64, eps[i]).unwrap();
                        assert!(r >= eta[i] * rate - 1e-10);
                    }
                    assert!(allocate_blocklengths(&gammas, rate, &eta, &eps, frame + 17).is_ok());
                }
                Err(e) => assert!(e.is_infeasible()),
            }
        }
    }
}
