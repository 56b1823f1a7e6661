mod common;

use cardiomodal::decomp::Cube;
use cardiomodal::hodmd::{dmd_d, hodmd_reconstruct, iterative_hodmd, DPolicy, DmdParams, HodmdConfig};
use cardiomodal::synth::{gaussian_blob, make_oscillator, standing_wave, Tone};
use cardiomodal::Error;
use common::{fourier_peak, hz};
use faer::Mat;

const DT: f64 = 0.01;
const K: usize = 200;

fn tone(pattern: Vec<f64>, f: f64, amplitude: f64, phase: f64) -> Tone {
    Tone { pattern, omega: hz(f), growth: 0.0, phase, amplitude }
}

fn snapshot(seq: &cardiomodal::SnapshotSequence) -> Mat<f64> {
    Cube::from_tensor(&seq.frames).unwrap().snapshot_matrix()
}

fn probe(seq: &cardiomodal::SnapshotSequence, p: usize) -> Vec<f64> {
    (0..seq.num_frames()).map(|k| seq.frame(k)[p] as f64).collect()
}

#[test]
fn single_tone_one_conjugate_pair() {
    let shape = (6, 6);
    let s = make_oscillator("one", shape, &[tone(standing_wave(shape, 1, 1), 5.0, 1.0, 0.0)], K, DT, 0.0, 0).unwrap();
    let oracle = fourier_peak(&probe(&s.sequence, 14), DT, 2000);
    assert!((oracle - hz(5.0)).abs() < 0.05, "fourier oracle {oracle}");

    let ms = dmd_d(&snapshot(&s.sequence), &DmdParams { d: 10, dt: DT, eps_svd: 5e-4, eps_dmd: 5e-4 }).unwrap();
    assert_eq!(ms.len(), 2, "{:?}", ms.modes.iter().map(|m| m.frequency).collect::<Vec<_>>());
    let mut w: Vec<f64> = ms.modes.iter().map(|m| m.frequency).collect();
    w.sort_by(f64::total_cmp);
    assert!((w[0] + hz(5.0)).abs() < 1e-3);
    assert!((w[1] - hz(5.0)).abs() < 1e-3);
    assert!(ms.modes.iter().all(|m| m.growth_rate.abs() < 1e-6));
}

#[test]
fn two_tone_noisy_both_pairs() {
    let shape = (6, 6);
    let tones = [
        tone(standing_wave(shape, 1, 1), 5.0, 1.0, 0.3),
        tone(standing_wave(shape, 2, 1), 11.0, 0.1, 1.1),
    ];
    let s = make_oscillator("two", shape, &tones, K, DT, 1e-3, 3).unwrap();
    let ms = dmd_d(&snapshot(&s.sequence), &DmdParams { d: 10, dt: DT, eps_svd: 5e-4, eps_dmd: 5e-4 }).unwrap();
    for f in [5.0, 11.0] {
        for sign in [-1.0, 1.0] {
            let target = sign * hz(f);
            let best = ms.modes.iter().map(|m| (m.frequency - target).abs()).fold(f64::INFINITY, f64::min);
            assert!(best < 1e-2, "{target}: nearest error {best}");
        }
    }
}

#[test]
fn d_one_matches_classical_dmd() {
    // x_{k+1} = A x_k with A a block rotation-scaling; eigenvalues known.
    let (r1, t1, r2, t2) = (0.99f64, 0.3f64, 0.97f64, 0.8f64);
    let a = [
        [r1 * t1.cos(), -r1 * t1.sin(), 0.0, 0.0],
        [r1 * t1.sin(), r1 * t1.cos(), 0.0, 0.0],
        [0.0, 0.0, r2 * t2.cos(), -r2 * t2.sin()],
        [0.0, 0.0, r2 * t2.sin(), r2 * t2.cos()],
    ];
    let mix = [[1.0, 0.2, -0.3, 0.5], [0.1, 1.0, 0.4, -0.2], [0.3, -0.1, 1.0, 0.2], [-0.2, 0.3, 0.1, 1.0], [0.5, 0.5, 0.5, 0.5]];
    let mut x = vec![1.0, 0.0, 1.0, 0.5];
    let k = 40;
    let mut cols = Vec::new();
    for _ in 0..k {
        cols.push(mix.iter().map(|row| row.iter().zip(&x).map(|(m, v)| m * v).sum::<f64>()).collect::<Vec<f64>>());
        x = a.iter().map(|row| row.iter().zip(&x).map(|(m, v)| m * v).sum()).collect();
    }
    let snaps = Mat::from_fn(5, k, |i, j| cols[j][i]);
    let dt = 0.1;
    let ms = dmd_d(&snaps, &DmdParams { d: 1, dt, eps_svd: 1e-12, eps_dmd: 0.0 }).unwrap();
    assert_eq!(ms.len(), 4);
    let mut got: Vec<(f64, f64)> = ms.modes.iter().map(|m| (m.frequency, m.growth_rate)).collect();
    let mut want = vec![
        (t1 / dt, r1.ln() / dt),
        (-t1 / dt, r1.ln() / dt),
        (t2 / dt, r2.ln() / dt),
        (-t2 / dt, r2.ln() / dt),
    ];
    got.sort_by(|a, b| a.0.total_cmp(&b.0));
    want.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (g, w) in got.iter().zip(&want) {
        assert!((g.0 - w.0).abs() < 1e-8 && (g.1 - w.1).abs() < 1e-8, "{g:?} vs {w:?}");
    }
}

#[test]
fn separable_field_converges_fast() {
    let shape = (12, 10);
    let s = make_oscillator("sep", shape, &[tone(standing_wave(shape, 2, 1), 4.0, 1.0, 0.2)], 90, DT, 0.0, 0).unwrap();
    let out = iterative_hodmd(&s.sequence, &HodmdConfig::default()).unwrap();
    assert!(out.converged);
    assert!(out.iterations <= 2, "{:?}", out.modes.retained_counts);
    let c = out.modes.retained_counts.last().unwrap();
    assert_eq!([c[0], c[1]], [1, 1]);
    assert!(out.modes.modes.iter().all(|m| m.growth_rate.abs() < 1e-3));
    let err = Cube::from_tensor(&out.reconstruction).unwrap().sub(&s.clean).frobenius() / s.clean.frobenius();
    assert!(err < 1e-5, "{err}");
}

#[test]
fn noisy_two_tone_denoises() {
    let shape = (16, 16);
    let tones = [
        tone(gaussian_blob(shape, 5.0, 6.0, 2.5), 5.0, 1.0, 0.3),
        tone(standing_wave(shape, 2, 3), 11.0, 0.5, 1.1),
    ];
    let noise = 1e-2;
    let s = make_oscillator("noisy", shape, &tones, K, DT, noise, 17).unwrap();
    let cfg = HodmdConfig { d_policy: DPolicy::Fixed(20), eps_svd: 0.05, eps_dmd: 5e-3, ..HodmdConfig::default() };
    let out = iterative_hodmd(&s.sequence, &cfg).unwrap();
    let counts = &out.modes.retained_counts;
    if counts.len() >= 2 {
        assert!(counts[1].iter().product::<usize>() <= counts[0].iter().product::<usize>(), "{counts:?}");
    }
    let recon = Cube::from_tensor(&out.reconstruction).unwrap();
    let noisy = Cube::from_tensor(&s.sequence.frames).unwrap();
    let rec_err = recon.sub(&s.clean).frobenius() / s.clean.frobenius();
    let in_err = noisy.sub(&s.clean).frobenius() / s.clean.frobenius();
    assert!(rec_err < in_err, "recon {rec_err} input {in_err}");
    assert!(rec_err < 3.0 * noise, "recon {rec_err}");
    let again = hodmd_reconstruct(&out.modes, &(0..K).collect::<Vec<_>>()).unwrap();
    let diff = Cube::from_tensor(&again).unwrap().sub(&recon).frobenius() / recon.frobenius();
    assert!(diff < 1e-5, "{diff}");
    assert!(out.modes.imaginary_residual(&(0..K).collect::<Vec<_>>()) < 1e-6);
}

#[test]
fn short_sequence_is_skipped() {
    let shape = (4, 4);
    let s = make_oscillator("short", shape, &[tone(standing_wave(shape, 1, 1), 4.0, 1.0, 0.0)], 15, DT, 0.0, 0).unwrap();
    assert!(matches!(
        iterative_hodmd(&s.sequence, &HodmdConfig::default()),
        Err(Error::BelowMinSnapshots { have: 15, min: 20 })
    ));
}
