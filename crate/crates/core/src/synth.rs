//! Synthetic oscillating sequences with analytic ground truth, and a small
//! separable multi-class dataset written in the same on-disk layout as real
//! data.

use std::f64::consts::TAU;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::decomp::Cube;
use crate::error::{Error, Result};
use crate::manifest::{ManifestEntry, SequenceManifest};
use crate::tensor::{write_json, write_stf, SnapshotSequence};

/// One damped oscillation `A * s(x, y) * exp(delta t) * cos(omega t + phi)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tone {
    /// Row-major `N_y * N_x` spatial pattern.
    pub pattern: Vec<f64>,
    pub omega: f64,
    pub growth: f64,
    pub phase: f64,
    pub amplitude: f64,
}

#[derive(Clone, Debug)]
pub struct SyntheticSequence {
    pub sequence: SnapshotSequence,
    /// Noise-free frames in `f64`.
    pub clean: Cube,
    /// Ground-truth `(omega, delta)` per tone.
    pub truth: Vec<(f64, f64)>,
}

pub fn make_oscillator(
    sequence_id: &str,
    shape: (usize, usize),
    tones: &[Tone],
    k: usize,
    dt: f64,
    noise_scale: f64,
    seed: u64,
) -> Result<SyntheticSequence> {
    let (ny, nx) = shape;
    let np = ny * nx;
    if let Some(t) = tones.iter().find(|t| t.pattern.len() != np) {
        return Err(Error::InvalidArgument(format!(
            "tone pattern has {} entries, frame has {np}",
            t.pattern.len()
        )));
    }
    if noise_scale < 0.0 || !noise_scale.is_finite() {
        return Err(Error::InvalidArgument("noise scale must be non-negative".into()));
    }
    let mut clean = vec![0.0f64; k * np];
    for (i, frame) in clean.chunks_exact_mut(np).enumerate() {
        let t = i as f64 * dt;
        for tone in tones {
            let c = tone.amplitude * (tone.growth * t).exp() * (tone.omega * t + tone.phase).cos();
            for (v, s) in frame.iter_mut().zip(&tone.pattern) {
                *v += c * s;
            }
        }
    }
    let mut noisy = clean.clone();
    if noise_scale > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, noise_scale).expect("finite noise scale");
        for v in &mut noisy {
            *v += normal.sample(&mut rng);
        }
    }
    let clean = Cube::new([k, ny, nx], clean)?;
    let frames = Cube::new([k, ny, nx], noisy)?.to_tensor();
    let sequence = SnapshotSequence::new(sequence_id, frames, dt, None)?;
    Ok(SyntheticSequence { sequence, clean, truth: tones.iter().map(|t| (t.omega, t.growth)).collect() })
}

/// Isotropic Gaussian bump centred at `(cy, cx)` pixels.
pub fn gaussian_blob(shape: (usize, usize), cy: f64, cx: f64, sigma: f64) -> Vec<f64> {
    let (ny, nx) = shape;
    (0..ny * nx)
        .map(|p| {
            let (y, x) = ((p / nx) as f64, (p % nx) as f64);
            (-((y - cy).powi(2) + (x - cx).powi(2)) / (2.0 * sigma * sigma)).exp()
        })
        .collect()
}

/// Separable standing wave `sin(pi ky (y + 1/2) / N_y) sin(pi kx (x + 1/2) / N_x)`.
pub fn standing_wave(shape: (usize, usize), ky: usize, kx: usize) -> Vec<f64> {
    let (ny, nx) = shape;
    (0..ny * nx)
        .map(|p| {
            let (y, x) = ((p / nx) as f64 + 0.5, (p % nx) as f64 + 0.5);
            (std::f64::consts::PI * ky as f64 * y / ny as f64).sin()
                * (std::f64::consts::PI * kx as f64 * x / nx as f64).sin()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyConfig {
    pub num_classes: usize,
    pub per_class: usize,
    pub frames: usize,
    pub dt: f64,
    pub shape: (usize, usize),
    pub noise: f64,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self { num_classes: 4, per_class: 8, frames: 48, dt: 0.02, shape: (32, 32), noise: 0.3, seed: 0 }
    }
}

impl ToyConfig {
    /// Oscillation frequency (Hz) that identifies `class`.
    pub fn class_hertz(class: usize) -> f64 {
        1.5 + 1.25 * class as f64
    }

    /// Centre of the class blob, stacked along the vertical midline so the
    /// layout is unchanged by horizontal flips.
    fn class_centre(&self, class: usize) -> (f64, f64) {
        let (ny, nx) = (self.shape.0 as f64, self.shape.1 as f64);
        let c = self.num_classes.max(1) as f64;
        (ny * (0.15 + 0.7 * (class as f64 + 0.5) / c), nx / 2.0)
    }

    pub fn class_name(class: usize) -> String {
        format!("class_{class}")
    }
}

/// One toy sequence of `class`; jitter drawn from `rng`.
pub fn toy_sequence(cfg: &ToyConfig, class: usize, index: usize, rng: &mut ChaCha8Rng) -> Result<SyntheticSequence> {
    let (cy, cx) = cfg.class_centre(class);
    let jy = rng.random_range(-1.0..1.0);
    let jx = rng.random_range(-1.0..1.0);
    let sigma = cfg.shape.0.min(cfg.shape.1) as f64 * 0.12;
    let blob = gaussian_blob(cfg.shape, cy + jy, cx + jx, sigma);
    let tissue = Tone { pattern: blob.clone(), omega: 0.0, growth: 0.0, phase: 0.0, amplitude: rng.random_range(0.9..1.1) };
    let tone = Tone {
        pattern: blob,
        omega: TAU * ToyConfig::class_hertz(class) * rng.random_range(0.95..1.05),
        growth: 0.0,
        phase: rng.random_range(0.0..TAU),
        amplitude: rng.random_range(0.5..0.7),
    };
    // Shared slow background oscillation, identical statistics in every class.
    let background = Tone {
        pattern: standing_wave(cfg.shape, 1, 1),
        omega: TAU * 0.4,
        growth: 0.0,
        phase: rng.random_range(0.0..TAU),
        amplitude: 0.3,
    };
    let seed = rng.random();
    let mut s = make_oscillator(
        &format!("c{class}_s{index:03}"),
        cfg.shape,
        &[tissue, tone, background],
        cfg.frames,
        cfg.dt,
        cfg.noise,
        seed,
    )?;
    s.sequence.label = Some(ToyConfig::class_name(class));
    Ok(s)
}

/// Writes `num_classes * per_class` sequences plus `manifest.json` into
/// `out_dir` and returns the manifest.
pub fn make_toy_classes(cfg: &ToyConfig, out_dir: &Path) -> Result<SequenceManifest> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut entries = Vec::new();
    for class in 0..cfg.num_classes {
        for i in 0..cfg.per_class {
            let s = toy_sequence(cfg, class, i, &mut rng)?;
            let file = format!("{}.stf", s.sequence.sequence_id);
            write_stf(&s.sequence.frames, out_dir.join(&file))?;
            entries.push(ManifestEntry {
                sequence_id: s.sequence.sequence_id.clone(),
                path: file.into(),
                label: s.sequence.label.clone(),
                dt: cfg.dt,
                split: None,
                roi: None,
                validity: None,
            });
        }
    }
    let manifest = SequenceManifest {
        classes: Some((0..cfg.num_classes).map(ToyConfig::class_name).collect()),
        entries,
    };
    write_json(&manifest, out_dir.join("manifest.json"))?;
    Ok(manifest)
}
