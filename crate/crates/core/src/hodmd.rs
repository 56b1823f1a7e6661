//! Higher order dynamic mode decomposition (DMD-d) and its multidimensional
//! iterative variant.
//!
//! [`dmd_d`] works on a snapshot matrix `[N, K]`; [`iterative_hodmd`] wraps it
//! with a spatial HOSVD reduction and repeats reduce -> DMD-d -> reconstruct
//! until the retained mode counts stop changing.

use std::f64::consts::PI;

use faer::{c64 as Complex64, Mat};
use serde::{Deserialize, Serialize};

use crate::decomp::{hosvd, truncated_svd, with_core, Cube, Retain};
use crate::error::{Error, Result};
use crate::linalg;
use crate::tensor::{SnapshotSequence, Tensor};

/// Frequencies closer than this (rad/s) are treated as conjugate partners.
pub const PAIR_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct DmdMode {
    /// Unit-norm complex spatial shape, flattened row-major when it comes from
    /// a frame stack.
    pub shape: Vec<Complex64>,
    /// Angular frequency in rad/s.
    pub frequency: f64,
    /// Growth rate in 1/s.
    pub growth_rate: f64,
    pub amplitude: f64,
}

impl DmdMode {
    pub fn eigenvalue(&self, dt: f64) -> Complex64 {
        Complex64::new(self.growth_rate * dt, self.frequency * dt).exp()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DmdModeSet {
    /// Sorted by amplitude descending, ties by |frequency| ascending, then
    /// positive frequency first.
    pub modes: Vec<DmdMode>,
    pub dt: f64,
    pub d: usize,
    /// Rank kept by the snapshot SVD and by the delay-matrix SVD.
    pub svd_rank: usize,
    pub delay_rank: usize,
    /// `[r_y, r_x, r_t]` per iteration of [`iterative_hodmd`]; empty for a
    /// plain [`dmd_d`] call.
    pub retained_counts: Vec<[usize; 3]>,
    /// `(N_y, N_x)` when mode shapes are images.
    pub frame_shape: Option<(usize, usize)>,
}

impl DmdModeSet {
    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn shape_len(&self) -> usize {
        self.modes.first().map_or(0, |m| m.shape.len())
    }

    /// Snapshots `Re(sum_m a_m u_m exp((delta_m + i omega_m) k dt))` as the
    /// columns of an `[N, len(ks)]` matrix.
    pub fn reconstruct_snapshots(&self, ks: &[usize]) -> Mat<f64> {
        let n = self.shape_len();
        let mut out = Mat::zeros(n.max(1), ks.len());
        for m in &self.modes {
            let lambda = Complex64::new(m.growth_rate, m.frequency);
            for (c, &k) in ks.iter().enumerate() {
                let w = (lambda * (k as f64 * self.dt)).exp() * m.amplitude;
                for (p, u) in m.shape.iter().enumerate() {
                    out[(p, c)] += (u * w).re;
                }
            }
        }
        out
    }

    /// Largest imaginary part of the complex reconstruction, relative to the
    /// largest real magnitude. Zero for exact conjugate symmetry.
    pub fn imaginary_residual(&self, ks: &[usize]) -> f64 {
        let n = self.shape_len();
        let mut re = vec![0.0f64; n * ks.len()];
        let mut im = vec![0.0f64; n * ks.len()];
        for m in &self.modes {
            let lambda = Complex64::new(m.growth_rate, m.frequency);
            for (c, &k) in ks.iter().enumerate() {
                let w = (lambda * (k as f64 * self.dt)).exp() * m.amplitude;
                for (p, u) in m.shape.iter().enumerate() {
                    let z = u * w;
                    re[c * n + p] += z.re;
                    im[c * n + p] += z.im;
                }
            }
        }
        let top = re.iter().map(|v| v.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        im.iter().map(|v| v.abs()).fold(0.0, f64::max) / top
    }

    /// Index of the conjugate partner of every mode, if any.
    pub fn conjugate_partners(&self) -> Vec<Option<usize>> {
        let mut used = vec![false; self.modes.len()];
        let mut partner = vec![None; self.modes.len()];
        for i in 0..self.modes.len() {
            let wi = self.modes[i].frequency;
            if used[i] || wi.abs() <= PAIR_TOLERANCE {
                continue;
            }
            let best = (0..self.modes.len())
                .filter(|&j| j != i && !used[j])
                .map(|j| (j, (self.modes[j].frequency + wi).abs()))
                .filter(|&(_, e)| e <= PAIR_TOLERANCE)
                .min_by(|a, b| a.1.total_cmp(&b.1));
            if let Some((j, _)) = best {
                used[i] = true;
                used[j] = true;
                partner[i] = Some(j);
                partner[j] = Some(i);
            }
        }
        partner
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DmdParams {
    pub d: usize,
    pub dt: f64,
    /// Relative singular-value tolerance for the snapshot and delay SVDs.
    pub eps_svd: f64,
    /// Relative amplitude tolerance `a_m / a_max`.
    pub eps_dmd: f64,
}

fn order_modes(modes: &mut [DmdMode]) {
    modes.sort_by(|a, b| {
        b.amplitude
            .total_cmp(&a.amplitude)
            .then(a.frequency.abs().total_cmp(&b.frequency.abs()))
            .then(b.frequency.total_cmp(&a.frequency))
    });
}

/// DMD-d on the columns of `snapshots` (`[N, K]`).
pub fn dmd_d(snapshots: &Mat<f64>, p: &DmdParams) -> Result<DmdModeSet> {
    let (n, k) = (snapshots.nrows(), snapshots.ncols());
    if p.d == 0 || k <= p.d {
        return Err(Error::InsufficientSnapshots { have: k, need: p.d.max(1) });
    }
    if !(p.dt > 0.0 && p.dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("dt must be positive, found {}", p.dt)));
    }
    if !(0.0..1.0).contains(&p.eps_dmd) {
        return Err(Error::InvalidArgument(format!("eps_dmd {} outside [0, 1)", p.eps_dmd)));
    }

    // Snapshot reduction.
    let first = truncated_svd(snapshots, Retain::Tolerance(p.eps_svd))?;
    let r1 = first.rank();
    let reduced = first.reduced();

    // Delay embedding: column j stacks reduced snapshots j .. j+d-1.
    let cols = k - p.d + 1;
    let delayed = Mat::from_fn(p.d * r1, cols, |row, col| reduced[(row % r1, col + row / r1)]);
    let second = truncated_svd(&delayed, Retain::Tolerance(p.eps_svd))?;
    let r2 = second.rank();
    let hat = second.reduced();

    // Least-squares propagator between shifted delay matrices.
    let past = hat.subcols(0, cols - 1).to_owned();
    let future = hat.subcols(1, cols - 1).to_owned();
    let propagator = future * linalg::pseudo_inverse(&past, 1e-13)?;
    let (mu, q) = linalg::eig(&propagator)?;

    // Modes in reduced snapshot coordinates: leading block of U2 q.
    let lead = linalg::to_complex(&second.left_modes.subrows(0, r1).to_owned());
    let mut shapes: Vec<Vec<Complex64>> = Vec::new();
    let mut eigen = Vec::new();
    for (i, &m) in mu.iter().enumerate() {
        if m.norm() == 0.0 {
            continue;
        }
        let w = &lead * q.col(i);
        let norm = w.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm <= f64::EPSILON {
            continue;
        }
        shapes.push(w.iter().map(|z| z / norm).collect());
        eigen.push(m);
    }
    if shapes.is_empty() {
        return Err(Error::DegenerateEigen("no usable eigenvalues".into()));
    }

    let amps = fit_amplitudes(&reduced, &shapes, &eigen)?;
    let lift = &first.left_modes;
    let top = amps.iter().map(|b| b.norm()).fold(0.0, f64::max);
    let mut modes = Vec::new();
    for ((w, &m), b) in shapes.iter().zip(&eigen).zip(&amps) {
        let a = b.norm();
        if top <= 0.0 || a / top <= p.eps_dmd {
            continue;
        }
        let phase = b / a;
        let shape = (0..n)
            .map(|row| (0..r1).map(|c| w[c] * lift[(row, c)]).sum::<Complex64>() * phase)
            .collect();
        let log = m.ln() / p.dt;
        modes.push(DmdMode { shape, frequency: log.im, growth_rate: log.re, amplitude: a });
    }
    order_modes(&mut modes);
    debug_assert!(modes.iter().all(|m| m.shape.len() == n));
    Ok(DmdModeSet {
        modes,
        dt: p.dt,
        d: p.d,
        svd_rank: r1,
        delay_rank: r2,
        retained_counts: Vec::new(),
        frame_shape: None,
    })
}

/// Least-squares amplitudes `b` minimising
/// `sum_k || x_k - sum_m b_m w_m mu_m^k ||^2` over all snapshots, solved
/// through the Hermitian normal equations `(W^H W o conj(V V^H)) b = diag(V X^H W)^*`.
fn fit_amplitudes(reduced: &Mat<f64>, shapes: &[Vec<Complex64>], mu: &[Complex64]) -> Result<Vec<Complex64>> {
    let (r, k) = (reduced.nrows(), reduced.ncols());
    let m = shapes.len();
    let w = Mat::from_fn(r, m, |i, j| shapes[j][i]);
    let mut vand = Mat::<Complex64>::zeros(m, k);
    for (j, &z) in mu.iter().enumerate() {
        let mut pow = Complex64::new(1.0, 0.0);
        for c in 0..k {
            vand[(j, c)] = pow;
            pow *= z;
        }
    }
    let x = linalg::to_complex(reduced);
    let gram = w.adjoint() * &w;
    let vvh = &vand * vand.adjoint();
    let p = Mat::from_fn(m, m, |i, j| gram[(i, j)] * vvh[(i, j)].conj());
    let proj = &vand * x.adjoint() * &w;
    let rhs = Mat::from_fn(m, 1, |i, _| proj[(i, i)].conj());
    let b = linalg::solve_hermitian(&p, &rhs)?;
    let b: Vec<Complex64> = (0..m).map(|i| b[(i, 0)]).collect();
    if b.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
        return Err(Error::DegenerateEigen("non-finite amplitude".into()));
    }
    Ok(b)
}

/// How the delay index `d` is chosen from the sequence length `K`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DPolicy {
    /// `floor(K / 3)`
    KOver3,
    /// `floor(K / 5)`
    KOver5,
    Fixed(usize),
}

impl DPolicy {
    pub fn resolve(self, k: usize) -> usize {
        let d = match self {
            DPolicy::KOver3 => k / 3,
            DPolicy::KOver5 => k / 5,
            DPolicy::Fixed(d) => d,
        };
        d.clamp(1, k.saturating_sub(1).max(1))
    }
}

impl std::str::FromStr for DPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "k3" => Ok(DPolicy::KOver3),
            "k5" => Ok(DPolicy::KOver5),
            _ => s
                .strip_prefix("fixed:")
                .and_then(|n| n.parse().ok())
                .filter(|&n: &usize| n >= 1)
                .map(DPolicy::Fixed)
                .ok_or_else(|| Error::InvalidArgument(format!("bad d policy {s:?}; use k3, k5 or fixed:N"))),
        }
    }
}

impl std::fmt::Display for DPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DPolicy::KOver3 => write!(f, "k3"),
            DPolicy::KOver5 => write!(f, "k5"),
            DPolicy::Fixed(d) => write!(f, "fixed:{d}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HodmdConfig {
    pub d_policy: DPolicy,
    pub eps_svd: f64,
    pub eps_dmd: f64,
    /// Defaults to `max(2 d + 1, 20)` when absent.
    pub min_snapshots: Option<usize>,
    pub max_iters: usize,
}

impl Default for HodmdConfig {
    fn default() -> Self {
        Self { d_policy: DPolicy::KOver3, eps_svd: 5e-4, eps_dmd: 5e-4, min_snapshots: None, max_iters: 10 }
    }
}

impl HodmdConfig {
    pub fn min_snapshots_for(&self, d: usize) -> usize {
        self.min_snapshots.unwrap_or_else(|| (2 * d + 1).max(20))
    }
}

#[derive(Clone, Debug)]
pub struct HodmdOutput {
    pub modes: DmdModeSet,
    /// `[K, N_y, N_x]`
    pub reconstruction: Tensor,
    pub iterations: usize,
    pub converged: bool,
    /// Wall-clock seconds spent in HOSVD reductions and in DMD-d proper.
    pub hosvd_seconds: f64,
    pub dmd_seconds: f64,
}

/// Multidimensional iterative HODMD on a homogenised sequence.
pub fn iterative_hodmd(s: &SnapshotSequence, cfg: &HodmdConfig) -> Result<HodmdOutput> {
    s.validate()?;
    if s.validity.iter().any(|v| !v) {
        return Err(Error::InvalidSequence(format!(
            "{}: contains invalid frames; split on validity first",
            s.sequence_id
        )));
    }
    let k = s.num_frames();
    let d = cfg.d_policy.resolve(k);
    let min = cfg.min_snapshots_for(d);
    if k < min || k <= d {
        return Err(Error::BelowMinSnapshots { have: k, min });
    }
    let (ny, nx) = (s.height(), s.width());
    let params = DmdParams { d, dt: s.dt, eps_svd: cfg.eps_svd, eps_dmd: cfg.eps_dmd };
    let ks: Vec<usize> = (0..k).collect();

    let mut current = Cube::from_tensor(&s.frames)?;
    let mut counts: Vec<[usize; 3]> = Vec::new();
    let mut hosvd_seconds = 0.0;
    let mut dmd_seconds = 0.0;
    let mut converged = false;
    let mut last = None;
    for _ in 0..cfg.max_iters.max(1) {
        let t0 = std::time::Instant::now();
        let h = hosvd(&current, cfg.eps_svd)?;
        hosvd_seconds += t0.elapsed().as_secs_f64();

        let t1 = std::time::Instant::now();
        let [ry, rx] = h.retained();
        let ms = dmd_d(&h.core.snapshot_matrix(), &params)?;
        let core_recon = Cube::from_snapshot_matrix(&ms.reconstruct_snapshots(&ks), ry, rx)?;
        dmd_seconds += t1.elapsed().as_secs_f64();

        let t2 = std::time::Instant::now();
        let recon = with_core(&h, &core_recon);
        hosvd_seconds += t2.elapsed().as_secs_f64();

        let c = [ry, rx, ms.svd_rank];
        let same = counts.last() == Some(&c);
        counts.push(c);
        current = recon;
        last = Some((h, ms));
        if same {
            converged = true;
            break;
        }
    }
    let (h, ms) = last.expect("at least one iteration runs");
    let modes = lift_modes(&ms, &h.factor_y, &h.factor_x);
    Ok(HodmdOutput {
        modes: DmdModeSet { modes, retained_counts: counts.clone(), frame_shape: Some((ny, nx)), ..ms },
        reconstruction: current.to_tensor(),
        iterations: counts.len(),
        converged,
        hosvd_seconds,
        dmd_seconds,
    })
}

/// Maps core-space modes `[r_y * r_x]` to image-space modes `U_y Q U_x^T`.
fn lift_modes(ms: &DmdModeSet, uy: &Mat<f64>, ux: &Mat<f64>) -> Vec<DmdMode> {
    let (ry, rx) = (uy.ncols(), ux.ncols());
    let uyc = linalg::to_complex(uy);
    let uxt = linalg::to_complex(&ux.transpose().to_owned());
    ms.modes
        .iter()
        .map(|m| {
            let q = Mat::from_fn(ry, rx, |a, b| m.shape[a * rx + b]);
            let img = &uyc * q * &uxt;
            let (ny, nx) = (img.nrows(), img.ncols());
            let mut shape: Vec<Complex64> = (0..ny * nx).map(|p| img[(p / nx, p % nx)]).collect();
            let norm = shape.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if norm > 0.0 {
                shape.iter_mut().for_each(|z| *z /= norm);
            }
            DmdMode { shape, ..m.clone() }
        })
        .collect()
}

/// Frames `Re(sum_m a_m u_m exp((delta_m + i omega_m) k dt))` for each `k`,
/// shaped `[len(ks), N_y, N_x]` (or `[len(ks), N, 1]` without a frame shape).
pub fn hodmd_reconstruct(ms: &DmdModeSet, ks: &[usize]) -> Result<Tensor> {
    let (ny, nx) = ms.frame_shape.unwrap_or((ms.shape_len().max(1), 1));
    let m = ms.reconstruct_snapshots(ks);
    Ok(Cube::from_snapshot_matrix(&m, ny, nx)?.to_tensor())
}

/// JSON sidecar entry describing one mode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub frequency: f64,
    pub growth_rate: f64,
    pub amplitude: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeSetSidecar {
    pub dt: f64,
    pub d: usize,
    pub frame_shape: Option<(usize, usize)>,
    pub retained_counts: Vec<[usize; 3]>,
    pub modes: Vec<ModeSummary>,
}

impl DmdModeSet {
    /// STF payload `[M, 2, N_y, N_x]` (plane 0 real, plane 1 imaginary) and
    /// the JSON sidecar of `(omega, delta, a)` triples.
    pub fn to_stf_and_sidecar(&self) -> Result<(Option<Tensor>, ModeSetSidecar)> {
        let sidecar = ModeSetSidecar {
            dt: self.dt,
            d: self.d,
            frame_shape: self.frame_shape,
            retained_counts: self.retained_counts.clone(),
            modes: self
                .modes
                .iter()
                .map(|m| ModeSummary { frequency: m.frequency, growth_rate: m.growth_rate, amplitude: m.amplitude })
                .collect(),
        };
        if self.modes.is_empty() {
            return Ok((None, sidecar));
        }
        let n = self.shape_len();
        let (ny, nx) = self.frame_shape.unwrap_or((n, 1));
        let mut data = Vec::with_capacity(self.modes.len() * 2 * n);
        for m in &self.modes {
            data.extend(m.shape.iter().map(|z| z.re as f32));
            data.extend(m.shape.iter().map(|z| z.im as f32));
        }
        Ok((Some(Tensor::new(vec![self.modes.len(), 2, ny, nx], data)?), sidecar))
    }

    pub fn from_stf_and_sidecar(t: Option<&Tensor>, s: &ModeSetSidecar) -> Result<Self> {
        let mut modes = Vec::with_capacity(s.modes.len());
        if let Some(t) = t {
            if t.rank() != 4 || t.dims()[0] != s.modes.len() || t.dims()[1] != 2 {
                return Err(Error::InvalidShape { dims: t.dims().to_vec(), reason: "mode tensor must be [M, 2, N_y, N_x]" });
            }
            let n = t.dims()[2] * t.dims()[3];
            for (i, sm) in s.modes.iter().enumerate() {
                let base = i * 2 * n;
                let re = &t.data()[base..base + n];
                let im = &t.data()[base + n..base + 2 * n];
                modes.push(DmdMode {
                    shape: re.iter().zip(im).map(|(&a, &b)| Complex64::new(a as f64, b as f64)).collect(),
                    frequency: sm.frequency,
                    growth_rate: sm.growth_rate,
                    amplitude: sm.amplitude,
                });
            }
        } else if !s.modes.is_empty() {
            return Err(Error::InvalidArgument("mode sidecar lists modes but no shapes were given".into()));
        }
        Ok(DmdModeSet {
            modes,
            dt: s.dt,
            d: s.d,
            svd_rank: 0,
            delay_rank: 0,
            retained_counts: s.retained_counts.clone(),
            frame_shape: s.frame_shape,
        })
    }
}

/// Frequency in Hz of an angular frequency.
pub fn hertz(omega: f64) -> f64 {
    omega / (2.0 * PI)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::TAU;

    fn tone_matrix(n: usize, k: usize, dt: f64, tones: &[(f64, f64, f64)]) -> Mat<f64> {
        // tones: (hz, amplitude, phase); spatial pattern varies per tone.
        Mat::from_fn(n, k, |p, c| {
            tones
                .iter()
                .enumerate()
                .map(|(j, &(hz, a, ph))| {
                    let s = ((p + 1) as f64 * (j + 1) as f64 * 0.37).sin() + 0.2;
                    a * s * (TAU * hz * c as f64 * dt + ph).cos()
                })
                .sum()
        })
    }

    fn max_abs(m: &Mat<f64>) -> f64 {
        let mut best = 0.0f64;
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                best = best.max(m[(i, j)].abs());
            }
        }
        best
    }

    #[test]
    fn d_policy_parsing() {
        assert_eq!("k3".parse::<DPolicy>().unwrap(), DPolicy::KOver3);
        assert_eq!("k5".parse::<DPolicy>().unwrap(), DPolicy::KOver5);
        assert_eq!("fixed:50".parse::<DPolicy>().unwrap(), DPolicy::Fixed(50));
        assert!("fixed:0".parse::<DPolicy>().is_err());
        assert!("k4".parse::<DPolicy>().is_err());
        assert_eq!(DPolicy::KOver3.resolve(100), 33);
        assert_eq!(DPolicy::KOver5.resolve(100), 20);
        assert_eq!(DPolicy::Fixed(500).resolve(100), 99);
    }

    #[test]
    fn insufficient_snapshots() {
        let m = Mat::from_fn(3, 4, |_, _| 1.0);
        let p = DmdParams { d: 4, dt: 0.1, eps_svd: 1e-10, eps_dmd: 0.0 };
        assert!(matches!(dmd_d(&m, &p), Err(Error::InsufficientSnapshots { .. })));
    }

    #[test]
    fn constant_sequence_single_static_mode() {
        let m = Mat::from_fn(5, 30, |p, _| 1.0 + p as f64);
        let p = DmdParams { d: 3, dt: 0.1, eps_svd: 1e-10, eps_dmd: 1e-6 };
        let ms = dmd_d(&m, &p).unwrap();
        assert_eq!(ms.len(), 1);
        assert!(ms.modes[0].frequency.abs() < 1e-10);
        assert!(ms.modes[0].growth_rate.abs() < 1e-10);
        let ks: Vec<usize> = (0..30).collect();
        assert!(max_abs(&(ms.reconstruct_snapshots(&ks) - &m)) < 1e-6);
    }

    #[test]
    fn modes_unit_norm_sorted_and_conjugate() {
        let m = tone_matrix(8, 120, 0.01, &[(5.0, 1.0, 0.3), (11.0, 0.1, 1.0)]);
        let p = DmdParams { d: 10, dt: 0.01, eps_svd: 1e-10, eps_dmd: 1e-6 };
        let ms = dmd_d(&m, &p).unwrap();
        assert_eq!(ms.len(), 4);
        for w in ms.modes.windows(2) {
            assert!(w[0].amplitude >= w[1].amplitude);
        }
        for m in &ms.modes {
            let norm: f64 = m.shape.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-6);
        }
        let partners = ms.conjugate_partners();
        for (i, p) in partners.iter().enumerate() {
            let j = p.expect("every oscillating mode has a partner");
            let (a, b) = (ms.modes[i].amplitude, ms.modes[j].amplitude);
            assert!((a - b).abs() <= 1e-4 * a);
        }
        let ks: Vec<usize> = (0..120).collect();
        assert!(ms.imaginary_residual(&ks) < 1e-6);
        assert!(max_abs(&(ms.reconstruct_snapshots(&ks) - &m)) < 1e-6);
    }

    #[test]
    fn amplitude_truncation_rule() {
        let m = tone_matrix(8, 120, 0.01, &[(5.0, 1.0, 0.3), (11.0, 0.01, 1.0)]);
        let base = DmdParams { d: 10, dt: 0.01, eps_svd: 1e-12, eps_dmd: 0.0 };
        let all = dmd_d(&m, &base).unwrap();
        let eps = 0.05;
        let kept = dmd_d(&m, &DmdParams { eps_dmd: eps, ..base }).unwrap();
        let amax = all.modes[0].amplitude;
        let expected: Vec<&DmdMode> = all.modes.iter().filter(|m| m.amplitude / amax > eps).collect();
        assert_eq!(kept.len(), expected.len());
        for (a, b) in kept.modes.iter().zip(expected) {
            assert!((a.frequency - b.frequency).abs() < 1e-9);
            assert!(a.amplitude / amax > eps);
        }
        assert!(all.modes.iter().any(|m| m.amplitude / amax <= eps));
    }

    #[test]
    fn sidecar_round_trip() {
        let m = tone_matrix(6, 60, 0.01, &[(5.0, 1.0, 0.0)]);
        let mut ms = dmd_d(&m, &DmdParams { d: 5, dt: 0.01, eps_svd: 1e-10, eps_dmd: 1e-6 }).unwrap();
        ms.frame_shape = Some((2, 3));
        let (t, side) = ms.to_stf_and_sidecar().unwrap();
        let t = t.unwrap();
        assert_eq!(t.dims(), &[ms.len(), 2, 2, 3]);
        let back = DmdModeSet::from_stf_and_sidecar(Some(&t), &side).unwrap();
        for (a, b) in back.modes.iter().zip(&ms.modes) {
            assert_eq!(a.frequency, b.frequency);
            for (za, zb) in a.shape.iter().zip(&b.shape) {
                assert!((za - zb).norm() < 1e-6);
            }
        }
    }
}
