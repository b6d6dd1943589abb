//! Clustered (Saleh-Valenzuela) mmWave MISO channels over a uniform linear array.

use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, CVector, ZERO};
use crate::model::SystemConfig;
use crate::numerics::Rng;

/// Path-loss intercept in dB at 1 m.
pub const PATH_LOSS_INTERCEPT_DB: f64 = 61.4;
/// Path-loss exponent.
pub const PATH_LOSS_EXPONENT: f64 = 2.0;
pub const SHADOWING_SIGMA_DB: f64 = 5.8;

const MIN_DISTANCE_M: f64 = 10.0;
const MAX_DISTANCE_M: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub n_elements: usize,
    pub spacing_over_lambda: f64,
}

impl ArrayGeometry {
    pub fn half_wavelength(n_elements: usize) -> Self {
        ArrayGeometry {
            n_elements,
            spacing_over_lambda: 0.5,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_elements == 0 || !(self.spacing_over_lambda > 0.0) {
            return Err(Error::Domain(format!("invalid array geometry {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSet {
    /// One length-`N_t` vector per user.
    pub h: Vec<CVector>,
    pub cu_angles: Vec<f64>,
    pub distances: Vec<f64>,
}

impl ChannelSet {
    pub fn new(h: Vec<CVector>, cu_angles: Vec<f64>, distances: Vec<f64>) -> Result<Self> {
        let set = ChannelSet {
            h,
            cu_angles,
            distances,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn n_users(&self) -> usize {
        self.h.len()
    }

    pub fn n_tx(&self) -> usize {
        self.h.first().map_or(0, |h| h.len())
    }

    /// `N_t x M` matrix whose columns are the user channels.
    pub fn matrix(&self) -> CMatrix {
        CMatrix::from_columns(&self.h)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.h.len();
        if m == 0 {
            return Err(Error::Dimension("channel set has no users".into()));
        }
        let n = self.h[0].len();
        if n == 0 {
            return Err(Error::Dimension("channel vectors are empty".into()));
        }
        if self.h.iter().any(|h| h.len() != n) {
            return Err(Error::Dimension("channel vectors differ in length".into()));
        }
        if self.cu_angles.len() != m || self.distances.len() != m {
            return Err(Error::Dimension("channel metadata length != users".into()));
        }
        for (i, h) in self.h.iter().enumerate() {
            if h.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(Error::Domain(format!("channel {i} has non-finite entries")));
            }
            if h.iter().all(|z| *z == ZERO) {
                return Err(Error::Domain(format!("channel {i} is identically zero")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ChannelRecord::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let rec: ChannelRecord = serde_json::from_str(s)?;
        rec.into_channel_set()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// On-disk form: each channel is an array of `[re, im]` pairs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChannelRecord {
    pub h: Vec<Vec<[f64; 2]>>,
    pub cu_angles: Vec<f64>,
    pub distances: Vec<f64>,
}

impl From<&ChannelSet> for ChannelRecord {
    fn from(c: &ChannelSet) -> Self {
        ChannelRecord {
            h: c.h.iter().map(|v| v.iter().map(|z| [z.re, z.im]).collect()).collect(),
            cu_angles: c.cu_angles.clone(),
            distances: c.distances.clone(),
        }
    }
}

impl ChannelRecord {
    pub fn into_channel_set(self) -> Result<ChannelSet> {
        let h = self
            .h
            .into_iter()
            .map(|v| CVector::from_iterator(v.len(), v.into_iter().map(|p| Complex64::new(p[0], p[1]))))
            .collect();
        ChannelSet::new(h, self.cu_angles, self.distances)
    }
}

/// ULA response `(1/sqrt(N)) [1, e^{j 2π s sinθ}, ..., e^{j (N-1) 2π s sinθ}]`.
pub fn steering_vector(angle_deg: f64, geom: &ArrayGeometry) -> Result<CVector> {
    geom.validate()?;
    if !(angle_deg.abs() <= 90.0) {
        return Err(Error::Domain(format!("angle {angle_deg} outside [-90, 90] degrees")));
    }
    Ok(steering_unchecked(angle_deg, geom))
}

fn steering_unchecked(angle_deg: f64, geom: &ArrayGeometry) -> CVector {
    let n = geom.n_elements;
    let scale = 1.0 / (n as f64).sqrt();
    let phase = 2.0 * std::f64::consts::PI * geom.spacing_over_lambda * angle_deg.to_radians().sin();
    CVector::from_iterator(n, (0..n).map(|k| Complex64::from_polar(scale, phase * k as f64)))
}

pub fn path_loss_db(distance_m: f64, shadow_db: f64) -> Result<f64> {
    if !(distance_m > 0.0) {
        return Err(Error::Domain(format!("distance must be positive, got {distance_m}")));
    }
    Ok(PATH_LOSS_INTERCEPT_DB + 10.0 * PATH_LOSS_EXPONENT * distance_m.log10() + shadow_db)
}

/// Sum of rays `sqrt(N_t / n_paths) Σ conj(α) a(φ)`, with `n_paths = rays.len()`.
pub fn channel_from_rays(rays: &[(Complex64, f64)], geom: &ArrayGeometry) -> Result<CVector> {
    geom.validate()?;
    if rays.is_empty() {
        return Err(Error::Domain("at least one ray is required".into()));
    }
    let n = geom.n_elements;
    let mut h = CVector::zeros(n);
    for &(alpha, angle) in rays {
        let a = steering_vector(angle, geom)?;
        h.axpy(alpha.conj(), &a, ONE_C);
    }
    h *= Complex64::from((n as f64 / rays.len() as f64).sqrt());
    Ok(h)
}

const ONE_C: Complex64 = Complex64 { re: 1.0, im: 0.0 };

fn draw_ray_angle(rng: &mut Rng, center: f64, laplace_scale: f64) -> f64 {
    loop {
        let a = center + rng.laplace(laplace_scale);
        if a.abs() <= 90.0 {
            return a;
        }
    }
}

/// Draws one channel realization per user.
///
/// Cluster centres are uniform on `[-90°, 90°]` (the first centre is pinned to
/// the configured user angle when one is given), ray offsets are Laplacian with
/// standard deviation equal to the angular spread, gains are
/// `CN(0, 10^{-PL(d)/10})` with log-normal shadowing redrawn per realization.
pub fn generate_channels(cfg: &SystemConfig, rng: &mut Rng) -> Result<ChannelSet> {
    let geom = ArrayGeometry::half_wavelength(cfg.n_tx);
    let m = cfg.n_cu;
    let laplace_scale = cfg.angular_spread_deg / 2f64.sqrt();
    let n_paths = cfg.n_clusters * cfg.n_rays;
    if n_paths == 0 {
        return Err(Error::Domain("need at least one cluster and one ray".into()));
    }
    let mut h = Vec::with_capacity(m);
    let mut angles = Vec::with_capacity(m);
    let mut distances = Vec::with_capacity(m);
    for u in 0..m {
        let d = match &cfg.cu_distances {
            Some(ds) => ds[u],
            None => MAX_DISTANCE_M - (MAX_DISTANCE_M - MIN_DISTANCE_M) * rng.uniform(0.0, 1.0),
        };
        let shadow = cfg.shadowing_db * rng.standard_normal();
        let gain = 10f64.powf(-0.1 * path_loss_db(d, shadow)?);
        let mut rays = Vec::with_capacity(n_paths);
        let mut first_center = 0.0;
        for c in 0..cfg.n_clusters {
            let drawn = rng.uniform(-90.0, 90.0);
            let center = match (&cfg.cu_angles, c) {
                (Some(a), 0) => a[u],
                _ => drawn,
            };
            if c == 0 {
                first_center = center;
            }
            for _ in 0..cfg.n_rays {
                let angle = draw_ray_angle(rng, center, laplace_scale);
                let alpha = rng.complex_normal(gain);
                rays.push((alpha, angle));
            }
        }
        h.push(channel_from_rays(&rays, &geom)?);
        angles.push(first_center);
        distances.push(d);
    }
    ChannelSet::new(h, angles, distances)
}
