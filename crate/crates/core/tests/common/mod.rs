#![allow(dead_code)]

use std::f64::consts::TAU;

/// Frequency (rad/s) of the largest peak of the discrete-time Fourier
/// transform of `x`, scanned on a grid of `bins` points in `(0, pi/dt)` and
/// refined by golden-section search. The mean is removed first.
pub fn fourier_peak(x: &[f64], dt: f64, bins: usize) -> f64 {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let power = |w: f64| {
        let (mut re, mut im) = (0.0, 0.0);
        for (k, v) in x.iter().enumerate() {
            let ph = w * k as f64 * dt;
            re += (v - mean) * ph.cos();
            im -= (v - mean) * ph.sin();
        }
        re * re + im * im
    };
    let nyq = std::f64::consts::PI / dt;
    let step = nyq / bins as f64;
    let mut best = step;
    let mut best_p = f64::MIN;
    for i in 1..bins {
        let w = i as f64 * step;
        let p = power(w);
        if p > best_p {
            best_p = p;
            best = w;
        }
    }
    let (mut a, mut b) = (best - step, best + step);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..100 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if power(c) > power(d) {
            b = d;
        } else {
            a = c;
        }
    }
    0.5 * (a + b)
}

pub fn hz(f: f64) -> f64 {
    TAU * f
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, sorted
/// descending. Used as an oracle independent of the SVD backend.
pub fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}
