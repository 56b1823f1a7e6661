//! Complex helpers around `faer` used by the DMD kernels.

use faer::{c64, Mat};

use crate::error::{Error, Result};

/// Eigenvalues and unit-norm eigenvectors (columns) of a real square matrix.
pub fn eig(m: &Mat<f64>) -> Result<(Vec<c64>, Mat<c64>)> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::InvalidArgument("eigen-decomposition needs a square matrix".into()));
    }
    for j in 0..n {
        for i in 0..n {
            if !m[(i, j)].is_finite() {
                return Err(Error::DegenerateEigen("non-finite propagator entry".into()));
            }
        }
    }
    let e = m.eigen().map_err(|e| Error::DegenerateEigen(format!("{e:?}")))?;
    let values: Vec<c64> = e.S().column_vector().iter().copied().collect();
    if values.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
        return Err(Error::DegenerateEigen("non-finite eigenvalue".into()));
    }
    let mut vectors = e.U().to_owned();
    for j in 0..n {
        let norm = (0..n).map(|i| vectors[(i, j)].norm_sqr()).sum::<f64>().sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::DegenerateEigen("zero eigenvector".into()));
        }
        for i in 0..n {
            vectors[(i, j)] /= norm;
        }
    }
    Ok((values, vectors))
}

/// Moore-Penrose pseudo-inverse dropping singular values below
/// `rel_cutoff * sigma_max`.
pub fn pseudo_inverse(m: &Mat<f64>, rel_cutoff: f64) -> Result<Mat<f64>> {
    let svd = m.thin_svd().map_err(|e| Error::DegenerateEigen(format!("{e:?}")))?;
    let s = svd.S().column_vector();
    let top = s.iter().copied().fold(0.0, f64::max);
    let inv: Vec<f64> = s.iter().map(|&v| if v > top * rel_cutoff && v > 0.0 { 1.0 / v } else { 0.0 }).collect();
    let (u, v) = (svd.U(), svd.V());
    let scaled = Mat::from_fn(v.nrows(), v.ncols(), |i, j| v[(i, j)] * inv[j]);
    Ok(scaled * u.transpose())
}

/// Solves `p x = q` for Hermitian positive semi-definite `p` through a
/// truncated pseudo-inverse.
pub fn solve_hermitian(p: &Mat<c64>, q: &Mat<c64>) -> Result<Mat<c64>> {
    let svd = p.thin_svd().map_err(|e| Error::DegenerateEigen(format!("{e:?}")))?;
    let s: Vec<f64> = svd.S().column_vector().iter().map(|z| z.re).collect();
    let top = s.iter().copied().fold(0.0, f64::max);
    let (u, v) = (svd.U(), svd.V());
    let inv: Vec<f64> = s.iter().map(|&x| if x > top * 1e-14 && x > 0.0 { 1.0 / x } else { 0.0 }).collect();
    let uhq = u.adjoint() * q;
    let scaled = Mat::from_fn(uhq.nrows(), uhq.ncols(), |i, j| uhq[(i, j)] * inv[i]);
    Ok(v * scaled)
}

pub fn to_complex(m: &Mat<f64>) -> Mat<c64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| c64::new(m[(i, j)], 0.0))
}
