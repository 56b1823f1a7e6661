mod common;

use cardiomodal::synth::{toy_sequence, ToyConfig};
use common::{fourier_peak, hz};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Mean Fourier peak of the brightest pixel of each toy class, which should sit
/// near the class tone and separate neighbouring classes.
#[test]
fn toy_classes_have_distinct_fourier_peaks() {
    let cfg = ToyConfig { frames: 96, noise: 0.05, ..ToyConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut peaks = Vec::new();
    for class in 0..cfg.num_classes {
        let mut sum = 0.0;
        for i in 0..5 {
            let s = toy_sequence(&cfg, class, i, &mut rng).unwrap();
            let clean = &s.clean;
            let (ny, nx) = (clean.dims()[1], clean.dims()[2]);
            let first = clean.frame(0);
            let p = (0..ny * nx).max_by(|&a, &b| first[(a / nx, a % nx)].abs().total_cmp(&first[(b / nx, b % nx)].abs())).unwrap();
            let series: Vec<f64> = (0..s.sequence.num_frames()).map(|k| s.sequence.frame(k)[p] as f64).collect();
            sum += fourier_peak(&series, cfg.dt, 4000);
        }
        peaks.push(sum / 5.0);
    }
    for (c, &w) in peaks.iter().enumerate() {
        let want = hz(ToyConfig::class_hertz(c));
        assert!((w - want).abs() < 0.06 * want, "class {c}: {w} vs {want}");
    }
    for pair in peaks.windows(2) {
        assert!(pair[1] - pair[0] > 3.0, "{peaks:?}");
    }
}
