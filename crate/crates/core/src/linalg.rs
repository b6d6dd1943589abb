//! Complex dense-matrix aliases and the handful of helpers the solvers share.
//!
//! Matrices are column-major, so `vec(A)` is simply the storage slice.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

pub const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
pub const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };

pub fn vec_of(m: &CMatrix) -> Vec<Complex64> {
    m.as_slice().to_vec()
}

pub fn unvec(d: &[Complex64], rows: usize, cols: usize) -> CMatrix {
    assert_eq!(d.len(), rows * cols, "unvec length mismatch");
    CMatrix::from_column_slice(rows, cols, d)
}

pub fn frobenius_sq(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

pub fn norm_sq(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

/// `Re(a^H b)`.
pub fn re_inner(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.re * y.re + x.im * y.im).sum()
}

/// `a^H b`.
pub fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Column-major Kronecker product `A ⊗ B`.
pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = CMatrix::zeros(ar * br, ac * bc);
    for j in 0..ac {
        for i in 0..ar {
            let s = a[(i, j)];
            if s == ZERO {
                continue;
            }
            for q in 0..bc {
                for p in 0..br {
                    out[(i * br + p, j * bc + q)] = s * b[(p, q)];
                }
            }
        }
    }
    out
}

/// Hermitian quadratic form `d^H Q d` (real part).
pub fn quad_form(q: &CMatrix, d: &[Complex64]) -> f64 {
    let dv = CVector::from_column_slice(d);
    let qd = q * &dv;
    re_inner(d, qd.as_slice())
}

/// Serializable complex matrix: column-major list of `[re, im]` pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixRecord {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<[f64; 2]>,
}

impl From<&CMatrix> for MatrixRecord {
    fn from(m: &CMatrix) -> Self {
        MatrixRecord {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.iter().map(|z| [z.re, z.im]).collect(),
        }
    }
}

impl MatrixRecord {
    pub fn to_matrix(&self) -> Option<CMatrix> {
        if self.data.len() != self.rows * self.cols {
            return None;
        }
        let v: Vec<Complex64> = self.data.iter().map(|p| Complex64::new(p[0], p[1])).collect();
        Some(CMatrix::from_column_slice(self.rows, self.cols, &v))
    }
}
