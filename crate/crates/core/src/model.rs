//! Scenario configuration, precoder containers and the closed-form metrics.

use serde::{Deserialize, Serialize};

use crate::channel::{steering_vector, ArrayGeometry, ChannelSet};
use crate::error::{Error, Result};
use crate::linalg::{frobenius_sq, CMatrix, MatrixRecord};
use crate::numerics::inv_q;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub n_tx: usize,
    pub n_rf: usize,
    pub n_cu: usize,
    pub n_tar: usize,
    /// Watts.
    pub p_max: f64,
    /// Noise power `N_o` in watts.
    pub noise: f64,
    /// Frame budget `N` in symbols.
    pub frame_budget: usize,
    pub eps: Vec<f64>,
    pub eta: Vec<f64>,
    pub target_angles: Vec<f64>,
    pub cu_angles: Option<Vec<f64>>,
    pub cu_distances: Option<Vec<f64>>,
    /// RBE bound; `None` means unbounded.
    pub e_max: Option<f64>,
    pub n_clusters: usize,
    pub n_rays: usize,
    pub angular_spread_deg: f64,
    pub shadowing_db: f64,
    /// Half-width of the desired-beampattern windows, degrees.
    pub beam_spread_deg: f64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig {
            n_tx: 128,
            n_rf: 4,
            n_cu: 2,
            n_tar: 2,
            p_max: 1.0,
            noise: 1e-12,
            frame_budget: 128,
            eps: vec![1e-5, 1e-5],
            eta: vec![0.5, 0.5],
            target_angles: vec![-60.0, -20.0],
            cu_angles: None,
            cu_distances: None,
            e_max: Some(0.15),
            n_clusters: 5,
            n_rays: 10,
            angular_spread_deg: 10.0,
            shadowing_db: crate::channel::SHADOWING_SIGMA_DB,
            beam_spread_deg: std::f64::consts::FRAC_1_SQRT_2,
        }
    }
}

impl SystemConfig {
    pub fn e_max_value(&self) -> f64 {
        self.e_max.unwrap_or(f64::INFINITY)
    }

    pub fn geometry(&self) -> ArrayGeometry {
        ArrayGeometry::half_wavelength(self.n_tx)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let m = self.n_cu;
        if m == 0 || self.n_tx == 0 {
            return bad("n_cu and n_tx must be positive".into());
        }
        if !(m <= self.n_rf && self.n_rf <= self.n_tx) {
            return bad(format!(
                "need n_cu <= n_rf <= n_tx, got {} / {} / {}",
                m, self.n_rf, self.n_tx
            ));
        }
        if self.n_tar == 0 || self.n_tar > m {
            return bad(format!("need 1 <= n_tar <= n_cu, got n_tar = {}", self.n_tar));
        }
        if self.target_angles.len() != self.n_tar {
            return bad(format!(
                "target_angles has {} entries, expected {}",
                self.target_angles.len(),
                self.n_tar
            ));
        }
        if self.target_angles.iter().any(|a| !(a.abs() <= 90.0)) {
            return bad("target angles must lie in [-90, 90] degrees".into());
        }
        if self.eps.len() != m || self.eta.len() != m {
            return bad(format!("eps and eta need {m} entries"));
        }
        if self.eps.iter().any(|&e| !(e > 0.0 && e < 0.5)) {
            return bad("each eps must lie in (0, 0.5)".into());
        }
        if self.eta.iter().any(|&e| !(e > 0.0 && e < 1.0)) && m > 1 {
            return bad("each eta must lie in (0, 1)".into());
        }
        if m == 1 && (self.eta[0] - 1.0).abs() > 1e-9 {
            return bad("a single user needs eta = 1".into());
        }
        let sum: f64 = self.eta.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return bad(format!("eta must sum to 1, got {sum}"));
        }
        if !(self.p_max > 0.0 && self.p_max.is_finite()) {
            return bad("p_max must be positive".into());
        }
        if !(self.noise > 0.0 && self.noise.is_finite()) {
            return bad("noise must be positive".into());
        }
        if self.frame_budget < m {
            return bad(format!("frame_budget must be at least {m}"));
        }
        if let Some(e) = self.e_max {
            if !(e >= 0.0) {
                return bad("e_max must be nonnegative".into());
            }
        }
        if let Some(a) = &self.cu_angles {
            if a.len() != m || a.iter().any(|x| !(x.abs() <= 90.0)) {
                return bad("cu_angles needs n_cu entries in [-90, 90]".into());
            }
        }
        if let Some(d) = &self.cu_distances {
            if d.len() != m || d.iter().any(|x| !(*x > 0.0)) {
                return bad("cu_distances needs n_cu positive entries".into());
            }
        }
        if self.n_clusters == 0 || self.n_rays == 0 {
            return bad("n_clusters and n_rays must be positive".into());
        }
        if !(self.angular_spread_deg >= 0.0) || !(self.shadowing_db >= 0.0) {
            return bad("angular_spread_deg and shadowing_db must be nonnegative".into());
        }
        if !(self.beam_spread_deg > 0.0) {
            return bad("beam_spread_deg must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HybridPrecoder {
    pub f_rf: CMatrix,
    pub f_bb: CMatrix,
    pub u: CMatrix,
}

impl HybridPrecoder {
    /// `F_RF F_BB`.
    pub fn product(&self) -> CMatrix {
        &self.f_rf * &self.f_bb
    }

    pub fn power(&self) -> f64 {
        frobenius_sq(&self.product())
    }

    /// Largest deviation from unit modulus across RF entries.
    pub fn modulus_error(&self) -> f64 {
        self.f_rf.iter().map(|z| (z.norm() - 1.0).abs()).fold(0.0, f64::max)
    }

    /// Largest entry of `|U U^H - I|`.
    pub fn orthonormality_error(&self) -> f64 {
        let g = &self.u * self.u.adjoint();
        let mut worst: f64 = 0.0;
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g[(i, j)] - target).norm());
            }
        }
        worst
    }

    /// Checks unit modulus, row-orthonormal `U` and (optionally) the power budget.
    pub fn check_invariants(&self, p_max: Option<f64>) -> Result<()> {
        if self.f_rf.ncols() != self.f_bb.nrows() || self.u.ncols() != self.f_bb.ncols() {
            return Err(Error::Dimension("precoder blocks do not conform".into()));
        }
        let me = self.modulus_error();
        if me > 1e-10 {
            return Err(Error::Precondition(format!("RF modulus error {me:e}")));
        }
        let oe = self.orthonormality_error();
        if oe > 1e-10 {
            return Err(Error::Precondition(format!("U U^H deviates from I by {oe:e}")));
        }
        if let Some(p) = p_max {
            let pw = self.power();
            if pw > p + 1e-8 {
                return Err(Error::Precondition(format!("power {pw} exceeds budget {p}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PrecoderRecord {
    pub f_rf: MatrixRecord,
    pub f_bb: MatrixRecord,
    pub u: MatrixRecord,
}

impl From<&HybridPrecoder> for PrecoderRecord {
    fn from(p: &HybridPrecoder) -> Self {
        PrecoderRecord {
            f_rf: (&p.f_rf).into(),
            f_bb: (&p.f_bb).into(),
            u: (&p.u).into(),
        }
    }
}

impl PrecoderRecord {
    pub fn to_precoder(&self) -> Result<HybridPrecoder> {
        let get = |r: &MatrixRecord, name: &str| {
            r.to_matrix()
                .ok_or_else(|| Error::Dimension(format!("{name} data length mismatch")))
        };
        Ok(HybridPrecoder {
            f_rf: get(&self.f_rf, "f_rf")?,
            f_bb: get(&self.f_bb, "f_bb")?,
            u: get(&self.u, "u")?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RadarSpec {
    pub f_r: CMatrix,
    pub target_angles: Vec<f64>,
}

pub fn ideal_radar_precoder(angles: &[f64], geom: &ArrayGeometry) -> Result<RadarSpec> {
    if angles.is_empty() {
        return Err(Error::Domain("at least one target angle is required".into()));
    }
    let cols = angles
        .iter()
        .map(|&a| steering_vector(a, geom))
        .collect::<Result<Vec<_>>>()?;
    Ok(RadarSpec {
        f_r: CMatrix::from_columns(&cols),
        target_angles: angles.to_vec(),
    })
}

/// SINR of every user for an arbitrary full precoder `F` (`N_t x M`).
pub fn sinr_of(ch: &ChannelSet, f: &CMatrix, noise: f64) -> Vec<f64> {
    let m = ch.n_users();
    let gains: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            let row = ch.h[i].adjoint() * f;
            row.iter().map(|z| z.norm_sqr()).collect()
        })
        .collect();
    (0..m)
        .map(|i| {
            let interference: f64 = (0..f.ncols()).filter(|&n| n != i).map(|n| gains[i][n]).sum();
            gains[i][i] / (interference + noise)
        })
        .collect()
}

pub fn sinr(ch: &ChannelSet, pc: &HybridPrecoder, noise: f64) -> Vec<f64> {
    sinr_of(ch, &pc.product(), noise)
}

pub fn dispersion(gamma: f64) -> Result<f64> {
    if !(gamma >= 0.0) {
        return Err(Error::Domain(format!("SINR must be nonnegative, got {gamma}")));
    }
    Ok(1.0 - 1.0 / ((1.0 + gamma) * (1.0 + gamma)))
}

/// Normal-approximation rate in nats per channel use.
pub fn fbl_rate(gamma: f64, beta: f64, eps: f64) -> Result<f64> {
    if !(beta >= 1.0) {
        return Err(Error::Domain(format!("block length must be >= 1, got {beta}")));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Domain(format!("error probability must lie in (0,1), got {eps}")));
    }
    let v = dispersion(gamma)?;
    Ok(gamma.ln_1p() - (v / beta).sqrt() * inv_q(eps)?)
}

pub fn shannon_rate(gamma: f64) -> f64 {
    gamma.max(0.0).ln_1p()
}

/// Sum of finite-blocklength rates with negative terms clamped to zero.
pub fn sum_fbl_rate(gammas: &[f64], betas: &[usize], eps: &[f64]) -> Result<f64> {
    let mut s = 0.0;
    for ((&g, &b), &e) in gammas.iter().zip(betas).zip(eps) {
        s += fbl_rate(g, b as f64, e)?.max(0.0);
    }
    Ok(s)
}

/// `‖F - F_r U‖²_F` for an arbitrary full precoder `F`.
pub fn rbe_of(f: &CMatrix, f_r: &CMatrix, u: &CMatrix) -> f64 {
    frobenius_sq(&(f - f_r * u))
}

pub fn rbe(pc: &HybridPrecoder, rs: &RadarSpec) -> f64 {
    rbe_of(&pc.product(), &rs.f_r, &pc.u)
}

/// Transmit beampattern `|a(θ)^H F|²` summed over streams, for an arbitrary precoder `F`.
pub fn beampattern_of(f: &CMatrix, grid: &[f64], geom: &ArrayGeometry) -> Result<Vec<f64>> {
    if grid.is_empty() {
        return Err(Error::Domain("beampattern grid is empty".into()));
    }
    grid.iter()
        .map(|&th| {
            let a = steering_vector(th, geom)?;
            let row = a.adjoint() * f;
            Ok(row.iter().map(|z| z.norm_sqr()).sum::<f64>().max(0.0))
        })
        .collect()
}

pub fn beampattern(pc: &HybridPrecoder, grid: &[f64], geom: &ArrayGeometry) -> Result<Vec<f64>> {
    beampattern_of(&pc.product(), grid, geom)
}

/// Indicator mask: 1 strictly inside `(θ_i - spread, θ_i + spread)` for some target.
pub fn desired_beampattern(angles: &[f64], spread: f64, grid: &[f64]) -> Result<Vec<f64>> {
    if !(spread > 0.0) {
        return Err(Error::Domain(format!("spread must be positive, got {spread}")));
    }
    Ok(grid
        .iter()
        .map(|&th| {
            if angles.iter().any(|&c| (th - c).abs() < spread) {
                1.0
            } else {
                0.0
            }
        })
        .collect())
}
