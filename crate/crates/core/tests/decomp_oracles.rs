mod common;

use cardiomodal::decomp::{svd_reconstruct, truncated_svd, Retain};
use common::jacobi_eigenvalues;
use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat<f64> {
    Mat::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn gram(m: &Mat<f64>) -> Vec<Vec<f64>> {
    let n = m.ncols();
    (0..n).map(|i| (0..n).map(|j| (0..m.nrows()).map(|k| m[(k, i)] * m[(k, j)]).sum()).collect()).collect()
}

#[test]
fn singular_values_match_gram_eigenvalues() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for (rows, cols) in [(10, 5), (5, 10), (7, 7), (30, 3)] {
        for _ in 0..10 {
            let m = random(rows, cols, &mut rng);
            let r = truncated_svd(&m, Retain::Count(rows.min(cols))).unwrap();
            let ev = jacobi_eigenvalues(gram(&m));
            for (s, l) in r.singular_values.iter().zip(&ev) {
                let want = l.max(0.0).sqrt();
                assert!((s - want).abs() <= 1e-6 * want.max(1e-12), "{s} vs {want}");
            }
        }
    }
}

#[test]
fn truncation_error_equals_dropped_tail() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let m = random(12, 8, &mut rng);
        let ev = jacobi_eigenvalues(gram(&m));
        for n in 1..=8 {
            let r = truncated_svd(&m, Retain::Count(n)).unwrap();
            let err = (svd_reconstruct(&r) - &m).norm_l2();
            let tail = ev[n..].iter().map(|l| l.max(0.0)).sum::<f64>().sqrt();
            assert!((err - tail).abs() <= 1e-5 * m.norm_l2(), "n = {n}: {err} vs {tail}");
            assert!((r.dropped_norm() - tail).abs() <= 1e-5 * m.norm_l2());
        }
    }
}

#[test]
fn tolerance_keeps_ratios_above_eps() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let m = random(9, 6, &mut rng);
    let full = truncated_svd(&m, Retain::Count(6)).unwrap();
    let s1 = full.singular_values[0];
    for eps in [0.0, 0.1, 0.3, 0.6, 0.99] {
        let r = truncated_svd(&m, Retain::Tolerance(eps)).unwrap();
        let want = full.singular_values.iter().filter(|s| *s / s1 > eps).count().max(1);
        assert_eq!(r.rank(), want, "eps {eps}");
    }
}
