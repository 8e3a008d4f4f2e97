//! Small dense complex helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

pub(crate) fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// Solves `a x = b` with partial-pivoting LU.
pub fn solve(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    a.clone().lu().solve(b).ok_or(Error::SingularSystem)
}

/// Solves a real square system with partial-pivoting LU.
pub fn solve_real(a: DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let lu = a.lu();
    let x = lu.solve(b).ok_or(Error::SingularSystem)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem);
    }
    Ok(x)
}

/// `ln det` of a Hermitian positive definite matrix via Cholesky.
pub fn hpd_logdet(a: &CMatrix) -> Result<f64> {
    let chol = hpd_cholesky(a)?;
    Ok(chol
        .l_dirty()
        .diagonal()
        .iter()
        .map(|d| 2.0 * d.re.ln())
        .sum())
}

/// Inverse of a Hermitian positive definite matrix via Cholesky.
pub fn hpd_inverse(a: &CMatrix) -> Result<CMatrix> {
    let chol = hpd_cholesky(a)?;
    Ok(hermitian_part(&chol.inverse()))
}

// Complex square roots never fail, so a negative pivot must be caught here.
fn hpd_cholesky(a: &CMatrix) -> Result<nalgebra::Cholesky<Complex64, nalgebra::Dyn>> {
    let not_pd = || Error::Numerical("matrix is not positive definite".into());
    let chol = hermitian_part(a).cholesky().ok_or_else(not_pd)?;
    let pivots_ok = chol
        .l_dirty()
        .diagonal()
        .iter()
        .all(|d| d.re > 0.0 && d.re.is_finite() && d.im.abs() <= 1e-12 * d.re);
    if pivots_ok {
        Ok(chol)
    } else {
        Err(not_pd())
    }
}

/// `(a + a^H) / 2`.
pub fn hermitian_part(a: &CMatrix) -> CMatrix {
    (a + a.adjoint()).map(|z| z * 0.5)
}

/// `tr(a b)` without forming the product.
pub fn trace_product(a: &CMatrix, b: &CMatrix) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

pub fn column_norm(a: &CMatrix, col: usize) -> f64 {
    a.column(col).norm()
}

/// Wire form of a complex matrix: shape plus row-major interleaved re/im.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixWire {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&CMatrix> for MatrixWire {
    fn from(m: &CMatrix) -> Self {
        let mut data = Vec::with_capacity(2 * m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(m[(i, j)].re);
                data.push(m[(i, j)].im);
            }
        }
        MatrixWire {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }
}

impl TryFrom<MatrixWire> for CMatrix {
    type Error = Error;

    fn try_from(w: MatrixWire) -> Result<Self> {
        if w.data.len() != 2 * w.rows * w.cols {
            return Err(Error::Dimension(format!(
                "matrix wire {}x{} carries {} doubles",
                w.rows,
                w.cols,
                w.data.len()
            )));
        }
        Ok(CMatrix::from_fn(w.rows, w.cols, |i, j| {
            let at = 2 * (i * w.cols + j);
            Complex64::new(w.data[at], w.data[at + 1])
        }))
    }
}

/// serde adapter for `CMatrix` fields.
pub mod cmatrix_serde {
    use super::*;

    pub fn serialize<S: Serializer>(m: &CMatrix, s: S) -> std::result::Result<S::Ok, S::Error> {
        MatrixWire::from(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<CMatrix, D::Error> {
        let wire = MatrixWire::deserialize(d)?;
        CMatrix::try_from(wire).map_err(serde::de::Error::custom)
    }
}

/// serde adapter for `Vec<CMatrix>` fields.
pub mod cmatrix_vec_serde {
    use super::*;

    pub fn serialize<S: Serializer>(v: &[CMatrix], s: S) -> std::result::Result<S::Ok, S::Error> {
        let wires: Vec<MatrixWire> = v.iter().map(MatrixWire::from).collect();
        wires.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<Vec<CMatrix>, D::Error> {
        let wires = Vec::<MatrixWire>::deserialize(d)?;
        wires
            .into_iter()
            .map(|w| CMatrix::try_from(w).map_err(serde::de::Error::custom))
            .collect()
    }
}
