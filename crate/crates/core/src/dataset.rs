//! Training database assembly: the twelve source-kind combinations, sequence
//! level splits, and class-balanced (optionally augmented) batches.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::Split;
use crate::preprocess::resize_image;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Original,
    SvdRecon,
    SvdMode,
    HodmdRecon,
    HodmdMode,
    SvdOfHodmdModeRecon,
}

impl SourceKind {
    pub const ALL: [SourceKind; 6] = [
        SourceKind::Original,
        SourceKind::SvdRecon,
        SourceKind::SvdMode,
        SourceKind::HodmdRecon,
        SourceKind::HodmdMode,
        SourceKind::SvdOfHodmdModeRecon,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SourceKind::Original => "original",
            SourceKind::SvdRecon => "svd_recon",
            SourceKind::SvdMode => "svd_mode",
            SourceKind::HodmdRecon => "hodmd_recon",
            SourceKind::HodmdMode => "hodmd_mode",
            SourceKind::SvdOfHodmdModeRecon => "svd_of_hodmd_mode_recon",
        }
    }
}

impl fmt::Display for SourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SourceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SourceKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown source kind {s:?}")))
    }
}

/// Which kinds form each training case, columns in `SourceKind::ALL` order.
pub const CASE_TABLE: [[bool; 6]; 12] = [
    [true, false, false, false, false, false],
    [false, true, false, false, false, false],
    [true, true, true, false, false, false],
    [true, true, false, false, false, false],
    [false, true, true, false, false, false],
    [false, false, false, true, false, false],
    [false, false, false, true, true, false],
    [false, true, false, true, false, false],
    [true, true, false, true, false, false],
    [false, false, false, true, true, true],
    [false, true, true, true, true, false],
    [false, true, true, true, true, true],
];

pub const NUM_CASES: usize = CASE_TABLE.len();

pub fn case_kinds(case: usize) -> Result<Vec<SourceKind>> {
    if !(1..=NUM_CASES).contains(&case) {
        return Err(Error::InvalidArgument(format!("training case must be 1..={NUM_CASES}, got {case}")));
    }
    Ok(SourceKind::ALL.into_iter().zip(CASE_TABLE[case - 1]).filter(|(_, on)| *on).map(|(k, _)| k).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    /// `[H, W]`
    pub image: Tensor,
    pub label: usize,
    pub source_kind: SourceKind,
    pub sequence_id: String,
}

/// Every image kind derived from one (sub-)sequence, each a stack `[n, H, W]`.
#[derive(Clone, Debug)]
pub struct DecomposedSequence {
    pub sequence_id: String,
    pub label: usize,
    pub kinds: BTreeMap<SourceKind, Tensor>,
}

impl DecomposedSequence {
    pub fn samples(&self, kind: SourceKind) -> Result<Vec<SampleRecord>> {
        let stack = self
            .kinds
            .get(&kind)
            .ok_or_else(|| Error::MissingKind { kind: kind.name().into(), sequence_id: self.sequence_id.clone() })?;
        (0..stack.dims()[0])
            .map(|i| {
                Ok(SampleRecord {
                    image: stack.slice_outer(i)?,
                    label: self.label,
                    source_kind: kind,
                    sequence_id: self.sequence_id.clone(),
                })
            })
            .collect()
    }
}

/// Samples of exactly the kinds marked for `case`, in registry order.
pub fn assemble_case(case: usize, registry: &[DecomposedSequence]) -> Result<Vec<SampleRecord>> {
    let kinds = case_kinds(case)?;
    let mut out = Vec::new();
    for seq in registry {
        for &k in &kinds {
            out.extend(seq.samples(k)?);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub fractions: [f64; 3],
    pub assignment: BTreeMap<String, Split>,
}

impl SplitPlan {
    pub fn ids(&self, split: Split) -> Vec<String> {
        self.assignment.iter().filter(|(_, s)| **s == split).map(|(id, _)| id.clone()).collect()
    }
}

/// Per-class split sizes: largest remainder on `n * fractions` (ties to the
/// earlier split), then every split is given at least one sequence by taking
/// from the split with the largest surplus over its target.
pub fn split_counts(n: usize, fractions: [f64; 3]) -> [usize; 3] {
    let targets = fractions.map(|f| f * n as f64);
    let mut counts = targets.map(|t| t.floor() as usize);
    let mut left = n - counts.iter().sum::<usize>();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let (ra, rb) = (targets[a] - counts[a] as f64, targets[b] - counts[b] as f64);
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    for i in 0..3 {
        if counts[i] == 0 {
            let donor = (0..3)
                .filter(|&j| counts[j] > 1)
                .max_by(|&a, &b| {
                    let (sa, sb) = (counts[a] as f64 - targets[a], counts[b] as f64 - targets[b]);
                    sa.partial_cmp(&sb).unwrap().then(b.cmp(&a))
                })
                .expect("at least three sequences");
            counts[donor] -= 1;
            counts[i] += 1;
        }
    }
    counts
}

fn check_fractions(f: [f64; 3]) -> Result<()> {
    if f.iter().any(|v| !(0.0..=1.0).contains(v)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("split fractions {f:?} must be non-negative and sum to 1")));
    }
    Ok(())
}

/// Sequence-level split of `(sequence_id, class)` items, balanced per class.
pub fn split_sequences(items: &[(String, usize)], fractions: [f64; 3], seed: u64) -> Result<SplitPlan> {
    check_fractions(fractions)?;
    let mut by_class: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
    for (id, c) in items {
        by_class.entry(*c).or_default().push(id);
    }
    let mut assignment = BTreeMap::new();
    for (class, mut ids) in by_class {
        if ids.len() < 3 {
            return Err(Error::TooFewSequences { class, have: ids.len(), need: 3 });
        }
        ids.sort_unstable();
        ids.shuffle(&mut stream_rng(seed, &[class as u64]));
        let counts = split_counts(ids.len(), fractions);
        let mut it = ids.into_iter();
        for (split, n) in Split::ALL.into_iter().zip(counts) {
            for id in it.by_ref().take(n) {
                assignment.insert(id.to_string(), split);
            }
        }
    }
    Ok(SplitPlan { fractions, assignment })
}

/// Sources whose derived sequences land in more than one split.
pub fn leaked_sources<'a>(derived: impl IntoIterator<Item = (&'a str, Split)>) -> Vec<String> {
    let mut seen: BTreeMap<&str, Split> = BTreeMap::new();
    let mut leaked = Vec::new();
    for (src, split) in derived {
        match seen.insert(src, split) {
            Some(prev) if prev != split && !leaked.iter().any(|l: &String| l == src) => leaked.push(src.to_string()),
            _ => {}
        }
    }
    leaked
}

/// RNG for a named sub-stream of `seed`; `parts` select the stream.
pub fn stream_rng(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for &p in parts {
        h = splitmix(h ^ splitmix(p.wrapping_add(0x632b_e59b_d9b4_e019)));
    }
    ChaCha8Rng::seed_from_u64(h)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub flip_probability: f64,
    pub rotation_degrees: f64,
    pub zoom: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { flip_probability: 0.5, rotation_degrees: 15.0, zoom: 0.10 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchConfig {
    pub batch_size: usize,
    pub min_class_fraction: f64,
    pub augment: Option<AugmentConfig>,
    /// Output image size `(H, W)`.
    pub target: (usize, usize),
}

impl BatchConfig {
    pub fn new(target: (usize, usize)) -> Self {
        Self { batch_size: 64, min_class_fraction: 0.15, augment: Some(AugmentConfig::default()), target }
    }
}

/// Random flip, rotation about the centre and zoom, resampled bilinearly onto
/// `to` with corner-aligned coordinates and zero fill outside the source.
pub fn augment_image(src: &[f32], from: (usize, usize), to: (usize, usize), cfg: &AugmentConfig, rng: &mut impl Rng) -> Vec<f32> {
    let flip = rng.random_bool(cfg.flip_probability.clamp(0.0, 1.0));
    let r = cfg.rotation_degrees.to_radians();
    let angle = if r > 0.0 { rng.random_range(-r..=r) } else { 0.0 };
    let zoom = if cfg.zoom > 0.0 { rng.random_range(1.0 - cfg.zoom..=1.0 + cfg.zoom) } else { 1.0 };
    warp(src, from, to, flip, angle, zoom)
}

fn warp(src: &[f32], from: (usize, usize), to: (usize, usize), flip: bool, angle: f64, zoom: f64) -> Vec<f32> {
    let (h, w) = from;
    let (oh, ow) = to;
    let axis = |i: usize, n_out: usize, n_in: usize| {
        if n_out <= 1 {
            0.0
        } else {
            i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
        }
    };
    let (cy, cx) = ((h - 1) as f64 / 2.0, (w - 1) as f64 / 2.0);
    let (sin, cos) = angle.sin_cos();
    let at = |y: isize, x: isize| {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            0.0
        } else {
            src[y as usize * w + x as usize] as f64
        }
    };
    let mut out = Vec::with_capacity(oh * ow);
    for i in 0..oh {
        for j in 0..ow {
            let dy = axis(i, oh, h) - cy;
            let mut dx = axis(j, ow, w) - cx;
            if flip {
                dx = -dx;
            }
            let sy = cy + (cos * dy - sin * dx) / zoom;
            let sx = cx + (sin * dy + cos * dx) / zoom;
            let (y0, x0) = (sy.floor(), sx.floor());
            let (fy, fx) = (sy - y0, sx - x0);
            let (y0, x0) = (y0 as isize, x0 as isize);
            let v = at(y0, x0) * (1.0 - fy) * (1.0 - fx)
                + at(y0, x0 + 1) * (1.0 - fy) * fx
                + at(y0 + 1, x0) * fy * (1.0 - fx)
                + at(y0 + 1, x0 + 1) * fy * fx;
            out.push(v as f32);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// Row-major `target` images.
    pub images: Vec<Vec<f32>>,
    pub labels: Vec<usize>,
    /// Sample indices the batch was drawn from.
    pub indices: Vec<usize>,
}

/// Deterministic, randomly addressable batch sequence over `samples`.
///
/// Each epoch shuffles the samples; batch `j` of an epoch takes a fixed quota
/// of `ceil(min_class_fraction * batch_size)` samples per class from per-class
/// shuffled cycles and fills the rest from the epoch permutation.
#[derive(Clone, Debug)]
pub struct BatchStream<'a> {
    samples: &'a [SampleRecord],
    cfg: BatchConfig,
    seed: u64,
    per_class: Vec<Vec<usize>>,
    quota: usize,
    fill: usize,
}

impl<'a> BatchStream<'a> {
    pub fn new(samples: &'a [SampleRecord], num_classes: usize, cfg: BatchConfig, seed: u64) -> Result<Self> {
        if samples.is_empty() || cfg.batch_size == 0 {
            return Err(Error::InvalidArgument("batches need at least one sample and a positive batch size".into()));
        }
        if !(0.0..=1.0).contains(&cfg.min_class_fraction) || cfg.min_class_fraction * num_classes as f64 > 1.0 + 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "min_class_fraction {} times {num_classes} classes exceeds 1",
                cfg.min_class_fraction
            )));
        }
        let mut per_class = vec![Vec::new(); num_classes];
        for (i, s) in samples.iter().enumerate() {
            if s.label >= num_classes {
                return Err(Error::InvalidArgument(format!("label {} outside {num_classes} classes", s.label)));
            }
            per_class[s.label].push(i);
        }
        let quota = (cfg.min_class_fraction * cfg.batch_size as f64 - 1e-9).ceil().max(0.0) as usize;
        if quota > 0 {
            if let Some(c) = per_class.iter().position(|v| v.is_empty()) {
                return Err(Error::InvalidArgument(format!("class {c} has no samples to meet the batch minimum")));
            }
        }
        let fill = cfg.batch_size.saturating_sub(quota * num_classes);
        Ok(Self { samples, cfg, seed, per_class, quota, fill })
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.samples.len().div_ceil(self.fill.max(1)).max(1)
    }

    pub fn indices(&self, i: usize) -> Vec<usize> {
        let bpe = self.batches_per_epoch();
        let (epoch, j) = ((i / bpe) as u64, i % bpe);
        let mut out = Vec::with_capacity(self.cfg.batch_size);
        if self.quota > 0 {
            for (c, members) in self.per_class.iter().enumerate() {
                let mut cycle = members.clone();
                cycle.shuffle(&mut stream_rng(self.seed, &[1, epoch, c as u64]));
                out.extend((0..self.quota).map(|t| cycle[(j * self.quota + t) % cycle.len()]));
            }
        }
        if self.fill > 0 {
            let mut perm: Vec<usize> = (0..self.samples.len()).collect();
            perm.shuffle(&mut stream_rng(self.seed, &[2, epoch]));
            let start = j * self.fill;
            out.extend_from_slice(&perm[start.min(perm.len())..(start + self.fill).min(perm.len())]);
        }
        out.shuffle(&mut stream_rng(self.seed, &[3, epoch, j as u64]));
        out
    }

    pub fn batch(&self, i: usize) -> Batch {
        let indices = self.indices(i);
        let mut images = Vec::with_capacity(indices.len());
        for (pos, &s) in indices.iter().enumerate() {
            let img = &self.samples[s].image;
            let from = (img.dims()[0], img.dims()[1]);
            images.push(match &self.cfg.augment {
                Some(a) => augment_image(img.data(), from, self.cfg.target, a, &mut stream_rng(self.seed, &[4, i as u64, pos as u64])),
                None => resize_image(img.data(), from, self.cfg.target),
            });
        }
        Batch { labels: indices.iter().map(|&s| self.samples[s].label).collect(), images, indices }
    }

    /// Infinite iterator starting at batch `start`.
    pub fn iter_from(&self, start: usize) -> impl Iterator<Item = Batch> + '_ {
        (start..).map(|i| self.batch(i))
    }
}

pub fn make_batches<'a>(
    samples: &'a [SampleRecord],
    num_classes: usize,
    cfg: BatchConfig,
    seed: u64,
) -> Result<impl Iterator<Item = Batch> + 'a> {
    let stream = BatchStream::new(samples, num_classes, cfg, seed)?;
    Ok((0..).map(move |i| stream.batch(i)))
}
