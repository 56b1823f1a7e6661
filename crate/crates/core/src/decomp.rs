//! Truncated SVD and spatial HOSVD.
//!
//! All kernels run in `f64` on `faer` matrices; [`Cube`] carries
//! `[K, N_y, N_x]` frame stacks between them.

use faer::Mat;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// How many singular triplets a truncated SVD keeps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Retain {
    /// Exactly `n` leading modes, `1 <= n <= min(J, K)`.
    Count(usize),
    /// Modes with `sigma_n / sigma_1 > eps`.
    Tolerance(f64),
}

impl Retain {
    fn count(self, sigma: &[f64]) -> Result<usize> {
        match self {
            Retain::Count(n) => {
                if n == 0 || n > sigma.len() {
                    return Err(Error::InvalidArgument(format!(
                        "retain count {n} outside 1..={}",
                        sigma.len()
                    )));
                }
                Ok(n)
            }
            Retain::Tolerance(eps) => {
                if !(0.0..1.0).contains(&eps) {
                    return Err(Error::InvalidArgument(format!("tolerance {eps} outside [0, 1)")));
                }
                Ok(tolerance_count(sigma, eps))
            }
        }
    }
}

/// Number of leading values with `sigma_n / sigma_1 > eps`, at least one.
pub fn tolerance_count(sigma: &[f64], eps: f64) -> usize {
    let top = sigma.first().copied().unwrap_or(0.0);
    if top <= 0.0 {
        return 1;
    }
    sigma.iter().take_while(|&&s| s / top > eps).count().max(1)
}

#[derive(Clone, Debug)]
pub struct SvdResult {
    /// `[J, N]`, orthonormal columns.
    pub left_modes: Mat<f64>,
    /// Retained singular values, non-increasing.
    pub singular_values: Vec<f64>,
    /// `[N, K]`, rows are the retained right singular vectors.
    pub right_factors: Mat<f64>,
    /// Every singular value of the input, retained or not.
    pub spectrum: Vec<f64>,
}

impl SvdResult {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    /// Frobenius norm of the discarded tail.
    pub fn dropped_norm(&self) -> f64 {
        self.spectrum[self.rank()..].iter().map(|s| s * s).sum::<f64>().sqrt()
    }

    /// Reduced coordinates `diag(sigma) * V^T`, shape `[N, K]`.
    pub fn reduced(&self) -> Mat<f64> {
        let vt = &self.right_factors;
        Mat::from_fn(vt.nrows(), vt.ncols(), |i, j| self.singular_values[i] * vt[(i, j)])
    }
}

fn check_finite(m: &Mat<f64>, what: &'static str) -> Result<()> {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if !m[(i, j)].is_finite() {
                return Err(Error::NonFinite(what));
            }
        }
    }
    Ok(())
}

/// Thin SVD with singular values sorted non-increasing and each left mode
/// flipped so its largest-magnitude entry is non-negative (the matching row of
/// `V^T` flips with it).
fn canonical_svd(m: &Mat<f64>) -> Result<(Mat<f64>, Vec<f64>, Mat<f64>)> {
    let svd = m.thin_svd().map_err(|e| Error::InvalidArgument(format!("svd failed to converge: {e:?}")))?;
    let (u, s, v) = (svd.U(), svd.S().column_vector(), svd.V());
    let mut order: Vec<usize> = (0..s.nrows()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let sign: Vec<f64> = order
        .iter()
        .map(|&c| {
            let mut best = 0;
            for i in 1..u.nrows() {
                if u[(i, c)].abs() > u[(best, c)].abs() {
                    best = i;
                }
            }
            if u[(best, c)] < 0.0 {
                -1.0
            } else {
                1.0
            }
        })
        .collect();
    let uo = Mat::from_fn(u.nrows(), order.len(), |i, j| sign[j] * u[(i, order[j])]);
    let vt = Mat::from_fn(order.len(), v.nrows(), |i, j| sign[i] * v[(j, order[i])]);
    let sigma = order.iter().map(|&i| s[i]).collect();
    Ok((uo, sigma, vt))
}

pub fn truncated_svd(m: &Mat<f64>, retain: Retain) -> Result<SvdResult> {
    check_finite(m, "svd input")?;
    let (u, spectrum, vt) = canonical_svd(m)?;
    let n = retain.count(&spectrum)?;
    Ok(SvdResult {
        left_modes: u.subcols(0, n).to_owned(),
        singular_values: spectrum[..n].to_vec(),
        right_factors: vt.subrows(0, n).to_owned(),
        spectrum,
    })
}

/// `U * diag(sigma) * V^T`.
pub fn svd_reconstruct(r: &SvdResult) -> Mat<f64> {
    &r.left_modes * r.reduced()
}

pub fn matrix_from_tensor(t: &Tensor) -> Result<Mat<f64>> {
    if t.rank() != 2 {
        return Err(Error::InvalidShape { dims: t.dims().to_vec(), reason: "expected a rank-2 tensor" });
    }
    let (r, c) = (t.dims()[0], t.dims()[1]);
    Ok(Mat::from_fn(r, c, |i, j| t.data()[i * c + j] as f64))
}

pub fn matrix_to_tensor(m: &Mat<f64>) -> Tensor {
    let data: Vec<f32> = (0..m.nrows())
        .flat_map(|i| (0..m.ncols()).map(move |j| (i, j)))
        .map(|(i, j)| m[(i, j)] as f32)
        .collect();
    Tensor::new(vec![m.nrows(), m.ncols()], data).expect("matrix dims are positive")
}

/// Row-major `f64` frame stack `[K, N_y, N_x]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Cube {
    dims: [usize; 3],
    data: Vec<f64>,
}

impl Cube {
    pub fn new(dims: [usize; 3], data: Vec<f64>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) || dims.iter().product::<usize>() != data.len() {
            return Err(Error::InvalidShape { dims: dims.to_vec(), reason: "cube extents do not match data" });
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: [usize; 3]) -> Self {
        Self { dims, data: vec![0.0; dims.iter().product()] }
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        if t.rank() != 3 {
            return Err(Error::InvalidShape { dims: t.dims().to_vec(), reason: "expected a rank-3 tensor" });
        }
        Self::new([t.dims()[0], t.dims()[1], t.dims()[2]], t.to_f64())
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_f64(self.dims.to_vec(), &self.data).expect("cube dims are positive")
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, k: usize, y: usize, x: usize) -> f64 {
        self.data[(k * self.dims[1] + y) * self.dims[2] + x]
    }

    pub fn frame(&self, k: usize) -> Mat<f64> {
        let [_, ny, nx] = self.dims;
        Mat::from_fn(ny, nx, |y, x| self.get(k, y, x))
    }

    pub fn set_frame(&mut self, k: usize, f: &Mat<f64>) {
        let [_, ny, nx] = self.dims;
        for y in 0..ny {
            for x in 0..nx {
                self.data[(k * ny + y) * nx + x] = f[(y, x)];
            }
        }
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn sub(&self, other: &Cube) -> Cube {
        assert_eq!(self.dims, other.dims, "cube shapes differ");
        Cube {
            dims: self.dims,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    /// Snapshot matrix `[N_y * N_x, K]`, column `k` is frame `k` row-major.
    pub fn snapshot_matrix(&self) -> Mat<f64> {
        let [k, ny, nx] = self.dims;
        Mat::from_fn(ny * nx, k, |p, c| self.data[c * ny * nx + p])
    }

    pub fn from_snapshot_matrix(m: &Mat<f64>, ny: usize, nx: usize) -> Result<Self> {
        if m.nrows() != ny * nx {
            return Err(Error::InvalidShape {
                dims: vec![m.nrows(), m.ncols()],
                reason: "snapshot rows must equal ny * nx",
            });
        }
        let k = m.ncols();
        let mut data = vec![0.0; k * ny * nx];
        for c in 0..k {
            for p in 0..ny * nx {
                data[c * ny * nx + p] = m[(p, c)];
            }
        }
        Self::new([k, ny, nx], data)
    }

    /// Mode-`axis` unfolding: rows run along `axis` (1 = y, 2 = x).
    fn unfold(&self, axis: usize) -> Mat<f64> {
        let [k, ny, nx] = self.dims;
        match axis {
            1 => Mat::from_fn(ny, k * nx, |y, c| self.get(c / nx, y, c % nx)),
            2 => Mat::from_fn(nx, k * ny, |x, c| self.get(c / ny, c % ny, x)),
            _ => unreachable!("only spatial axes are unfolded"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct HosvdResult {
    /// `[K, r_y, r_x]`.
    pub core: Cube,
    /// `[N_y, r_y]`, orthonormal columns.
    pub factor_y: Mat<f64>,
    /// `[N_x, r_x]`, orthonormal columns.
    pub factor_x: Mat<f64>,
    /// Singular values of the y and x unfoldings.
    pub spectra: [Vec<f64>; 2],
}

impl HosvdResult {
    pub fn retained(&self) -> [usize; 2] {
        [self.factor_y.ncols(), self.factor_x.ncols()]
    }

    /// Root-sum-square of the singular values dropped across both unfoldings.
    pub fn dropped_norm(&self) -> f64 {
        let r = self.retained();
        self.spectra
            .iter()
            .zip(r)
            .flat_map(|(s, n)| s[n..].iter())
            .map(|s| s * s)
            .sum::<f64>()
            .sqrt()
    }
}

fn unfolding_factor(t: &Cube, axis: usize, eps: f64) -> Result<(Mat<f64>, Vec<f64>)> {
    let (u, sigma, _) = canonical_svd(&t.unfold(axis))?;
    let n = tolerance_count(&sigma, eps);
    Ok((u.subcols(0, n).to_owned(), sigma))
}

/// HOSVD along the two spatial dimensions of a `[K, N_y, N_x]` stack. The
/// temporal dimension is left unfactored.
pub fn hosvd(t: &Cube, eps: f64) -> Result<HosvdResult> {
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::InvalidArgument(format!("tolerance {eps} outside [0, 1)")));
    }
    if !t.data.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("hosvd input"));
    }
    let (factor_y, sy) = unfolding_factor(t, 1, eps)?;
    let (factor_x, sx) = unfolding_factor(t, 2, eps)?;
    let k = t.dims[0];
    let mut core = Cube::zeros([k, factor_y.ncols(), factor_x.ncols()]);
    for i in 0..k {
        let c = factor_y.transpose() * t.frame(i) * &factor_x;
        core.set_frame(i, &c);
    }
    Ok(HosvdResult { core, factor_y, factor_x, spectra: [sy, sx] })
}

pub fn hosvd_reconstruct(r: &HosvdResult) -> Cube {
    with_core(r, &r.core)
}

/// Expands an arbitrary `[K, r_y, r_x]` core with the factors of `r`.
pub fn with_core(r: &HosvdResult, core: &Cube) -> Cube {
    let k = core.dims[0];
    let mut out = Cube::zeros([k, r.factor_y.nrows(), r.factor_x.nrows()]);
    for i in 0..k {
        let f = &r.factor_y * core.frame(i) * r.factor_x.transpose();
        out.set_frame(i, &f);
    }
    out
}

/// Largest deviation of `Q^T Q` from the identity.
pub fn orthonormality_error(q: &Mat<f64>) -> f64 {
    let g = q.transpose() * q;
    let n = g.nrows();
    (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| (g[(i, j)] - if i == j { 1.0 } else { 0.0 }).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(r: usize, c: usize, seed: u64) -> Mat<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Mat::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn rank_one_exact() {
        let u = [1.0, -2.0, 0.5, 3.0];
        let v = [2.0, 1.0, -1.0];
        let m = Mat::from_fn(4, 3, |i, j| u[i] * v[j]);
        let r = truncated_svd(&m, Retain::Count(1)).unwrap();
        assert!((svd_reconstruct(&r) - &m).norm_l2() < 1e-12);
        assert!(r.spectrum[1..].iter().all(|&s| s < 1e-12));
        let r = truncated_svd(&m, Retain::Tolerance(1e-8)).unwrap();
        assert_eq!(r.rank(), 1);
    }

    #[test]
    fn rank_deficient_wide_matrix() {
        // Constant delay-style matrix; exact rank one.
        let m = Mat::from_fn(3, 28, |_, _| 7.416198487095666);
        let r = truncated_svd(&m, Retain::Count(3)).unwrap();
        assert!((svd_reconstruct(&r) - &m).norm_l2() < 1e-10);
        assert!((r.spectrum[0] - 7.416198487095666 * 84f64.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn identity_singular_values() {
        let r = truncated_svd(&Mat::identity(3, 3), Retain::Count(3)).unwrap();
        for s in &r.singular_values {
            assert!((s - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_matrix_reconstructs_to_zero() {
        let m = Mat::<f64>::zeros(4, 3);
        let r = truncated_svd(&m, Retain::Tolerance(0.1)).unwrap();
        assert_eq!(r.rank(), 1);
        assert_eq!(svd_reconstruct(&r).norm_l2(), 0.0);
    }

    #[test]
    fn invalid_retain_and_non_finite() {
        let m = random(3, 2, 1);
        assert!(truncated_svd(&m, Retain::Count(0)).is_err());
        assert!(truncated_svd(&m, Retain::Count(3)).is_err());
        assert!(truncated_svd(&m, Retain::Tolerance(1.0)).is_err());
        let mut bad = m.clone();
        bad[(0, 0)] = f64::NAN;
        assert!(matches!(truncated_svd(&bad, Retain::Count(1)), Err(Error::NonFinite(_))));
    }

    #[test]
    fn sign_convention_makes_largest_entry_positive() {
        let m = random(6, 4, 7);
        let r = truncated_svd(&m, Retain::Count(4)).unwrap();
        for j in 0..4 {
            let big = (0..6).map(|i| r.left_modes[(i, j)]).fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
            assert!(big >= 0.0);
        }
        assert!((svd_reconstruct(&r) - &m).norm_l2() < 1e-12);
    }

    #[test]
    fn full_rank_reconstructs_and_orthonormal() {
        let m = random(10, 5, 3);
        let r = truncated_svd(&m, Retain::Count(5)).unwrap();
        assert!((svd_reconstruct(&r) - &m).norm_l2() / m.norm_l2() < 1e-5);
        assert!(orthonormality_error(&r.left_modes) < 1e-6);
    }

    #[test]
    fn truncation_error_is_monotone() {
        for seed in 0..10 {
            let m = random(8, 6, seed);
            let mut prev = f64::INFINITY;
            for n in 1..=6 {
                let r = truncated_svd(&m, Retain::Count(n)).unwrap();
                let err = (svd_reconstruct(&r) - &m).norm_l2();
                assert!(err <= prev + 1e-12);
                assert!((err - r.dropped_norm()).abs() <= 1e-5 * m.norm_l2());
                prev = err;
            }
        }
    }

    #[test]
    fn separable_cube_is_rank_one() {
        let a = [1.0, -0.5, 2.0];
        let b = [0.3, 1.0, 0.0, -1.0];
        let c = [2.0, 1.0, -1.0, 0.5, 0.25];
        let mut data = Vec::new();
        for &ak in &a {
            for &by in &b {
                for &cx in &c {
                    data.push(ak * by * cx);
                }
            }
        }
        let t = Cube::new([3, 4, 5], data).unwrap();
        let h = hosvd(&t, 1e-8).unwrap();
        assert_eq!(h.retained(), [1, 1]);
        assert!(hosvd_reconstruct(&h).sub(&t).frobenius() < 1e-12);
    }

    #[test]
    fn random_cube_full_rank_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data: Vec<f64> = (0..6 * 5 * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let t = Cube::new([6, 5, 4], data).unwrap();
        let h = hosvd(&t, 0.0).unwrap();
        assert_eq!(h.retained(), [5, 4]);
        assert!(hosvd_reconstruct(&h).sub(&t).frobenius() / t.frobenius() < 1e-5);
        assert!(orthonormality_error(&h.factor_y) < 1e-6);
        assert!(orthonormality_error(&h.factor_x) < 1e-6);
    }

    #[test]
    fn snapshot_matrix_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data: Vec<f64> = (0..3 * 2 * 4).map(|_| rng.random()).collect();
        let t = Cube::new([3, 2, 4], data).unwrap();
        let m = t.snapshot_matrix();
        assert_eq!((m.nrows(), m.ncols()), (8, 3));
        assert_eq!(Cube::from_snapshot_matrix(&m, 2, 4).unwrap(), t);
    }
}
