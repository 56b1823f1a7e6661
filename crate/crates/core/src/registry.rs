//! Decomposed-sequence registry on disk and the dataset descriptions built
//! from it.
//!
//! Layout of a registry directory:
//!
//! ```text
//! index.json                    classes, settings, entries, skipped sequences
//! timings.json                  per-sequence phase timings (non-deterministic)
//! <sequence_id>/<kind>.stf      image stack [n, H, W] for each source kind
//! <sequence_id>/modes.stf       HODMD modes [M, 2, H, W]
//! <sequence_id>/modes.json      (omega, delta, a) sidecar
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{assemble_case, case_kinds, leaked_sources, split_sequences, DecomposedSequence, SampleRecord, SourceKind};
use crate::decomp::{matrix_from_tensor, svd_reconstruct, truncated_svd, Cube, Retain};
use crate::error::{Error, Result};
use crate::hodmd::{iterative_hodmd, DmdModeSet, HodmdConfig, ModeSetSidecar};
use crate::manifest::{SequenceManifest, Split};
use crate::preprocess::{crop_roi, magnitude_image, min_max, normalize_intensity, render_mode_image, resize_bilinear, split_on_validity};
use crate::tensor::{read_json, read_stf, reshape_to_snapshot_matrix, write_json, write_stf, SnapshotSequence, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecomposeConfig {
    pub hodmd: HodmdConfig,
    /// Retained SVD modes, capped by the matrix rank.
    pub svd_modes: usize,
    pub resize: Option<(usize, usize)>,
    pub normalize: bool,
}

impl Default for DecomposeConfig {
    fn default() -> Self {
        Self { hodmd: HodmdConfig::default(), svd_modes: 5, resize: None, normalize: true }
    }
}

/// Wall-clock totals for one sequence, in milliseconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub frames: usize,
    pub svd_ms: f64,
    pub hosvd_ms: f64,
    pub hodmd_ms: f64,
}

#[derive(Clone, Debug)]
pub struct Decomposition {
    pub kinds: BTreeMap<SourceKind, Tensor>,
    pub modes: DmdModeSet,
    pub timings: PhaseTimings,
}

/// Crop, split on validity, normalise and resize. Fully valid sequences keep
/// their id; otherwise each run gets an `_r{i}` suffix.
pub fn homogenize(s: &SnapshotSequence, cfg: &DecomposeConfig) -> Result<Vec<SnapshotSequence>> {
    let s = if s.roi.is_some() { crop_roi(s)? } else { s.clone() };
    let runs = if s.validity.iter().all(|&v| v) { vec![s] } else { split_on_validity(&s) };
    runs.into_iter()
        .map(|r| {
            let r = if cfg.normalize { normalize_intensity(&r) } else { r };
            match cfg.resize {
                Some(t) if t != (r.height(), r.width()) => resize_bilinear(&r, t),
                _ => Ok(r),
            }
        })
        .collect()
}

/// One magnitude image per conjugate pair (the `omega >= 0` member), plus
/// unpaired modes, as `[M', H, W]`.
pub fn hodmd_mode_images(ms: &DmdModeSet, shape: (usize, usize)) -> Result<Tensor> {
    let partners = ms.conjugate_partners();
    let images = ms
        .modes
        .iter()
        .enumerate()
        .filter(|(i, m)| match partners[*i] {
            Some(p) => m.frequency > ms.modes[p].frequency || (m.frequency == ms.modes[p].frequency && *i < p),
            None => true,
        })
        .map(|(_, m)| render_mode_image(m, shape))
        .collect::<Result<Vec<_>>>()?;
    Tensor::stack(&images)
}

/// Rank-`n` SVD reconstruction of a stack of images, each rescaled to `[0, 1]`.
pub fn svd_of_images(images: &Tensor, n: usize) -> Result<Tensor> {
    let (m, h, w) = (images.dims()[0], images.dims()[1], images.dims()[2]);
    let cols = Cube::from_tensor(images)?.snapshot_matrix();
    let r = truncated_svd(&cols, Retain::Count(n.clamp(1, m.min(h * w))))?;
    let mut out = Cube::from_snapshot_matrix(&svd_reconstruct(&r), h, w)?.to_tensor();
    for img in out.data_mut().chunks_exact_mut(h * w) {
        min_max(img);
    }
    Ok(out)
}

/// All six image kinds of a homogenised sequence.
pub fn decompose_sequence(s: &SnapshotSequence, cfg: &DecomposeConfig) -> Result<Decomposition> {
    let (k, h, w) = (s.num_frames(), s.height(), s.width());
    let t0 = Instant::now();
    let snap = matrix_from_tensor(&reshape_to_snapshot_matrix(s))?;
    let svd = truncated_svd(&snap, Retain::Count(cfg.svd_modes.clamp(1, k.min(h * w))))?;
    let svd_recon = Cube::from_snapshot_matrix(&svd_reconstruct(&svd), h, w)?.to_tensor();
    let svd_modes = (0..svd.rank())
        .map(|n| magnitude_image(svd.left_modes.col(n).iter().copied(), (h, w)))
        .collect::<Result<Vec<_>>>()?;
    let svd_ms = t0.elapsed().as_secs_f64() * 1e3;

    let out = iterative_hodmd(s, &cfg.hodmd)?;
    let mode_images = hodmd_mode_images(&out.modes, (h, w))?;
    let svd_of_modes = svd_of_images(&mode_images, cfg.svd_modes)?;

    let kinds = BTreeMap::from([
        (SourceKind::Original, s.frames.clone()),
        (SourceKind::SvdRecon, svd_recon),
        (SourceKind::SvdMode, Tensor::stack(&svd_modes)?),
        (SourceKind::HodmdRecon, out.reconstruction),
        (SourceKind::HodmdMode, mode_images),
        (SourceKind::SvdOfHodmdModeRecon, svd_of_modes),
    ]);
    Ok(Decomposition {
        kinds,
        modes: out.modes,
        timings: PhaseTimings { frames: k, svd_ms, hosvd_ms: out.hosvd_seconds * 1e3, hodmd_ms: out.dmd_seconds * 1e3 },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub sequence_id: String,
    /// Manifest sequence this entry was derived from.
    pub source_id: String,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    pub frames: usize,
    /// Relative paths of the image stack for each kind.
    pub files: BTreeMap<SourceKind, PathBuf>,
    pub modes: PathBuf,
    pub modes_sidecar: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedSequence {
    pub sequence_id: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistryIndex {
    pub classes: Vec<String>,
    pub config: DecomposeConfig,
    pub entries: Vec<RegistryEntry>,
    pub skipped: Vec<SkippedSequence>,
}

pub const INDEX_FILE: &str = "index.json";
pub const TIMINGS_FILE: &str = "timings.json";

impl RegistryIndex {
    pub fn load(path: impl AsRef<Path>) -> Result<(Self, PathBuf)> {
        let path = path.as_ref();
        let path = if path.is_dir() { path.join(INDEX_FILE) } else { path.to_path_buf() };
        let index: Self = read_json(&path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((index, base))
    }

    pub fn class_index(&self, label: &str) -> Result<usize> {
        self.classes
            .iter()
            .position(|c| c == label)
            .ok_or_else(|| Error::Manifest(format!("label {label:?} is not a registry class")))
    }

    pub fn load_entry(&self, e: &RegistryEntry, base: &Path, kinds: &[SourceKind]) -> Result<DecomposedSequence> {
        let mut out = BTreeMap::new();
        for &k in kinds {
            let file = e
                .files
                .get(&k)
                .ok_or_else(|| Error::MissingKind { kind: k.name().into(), sequence_id: e.sequence_id.clone() })?;
            out.insert(k, read_stf(base.join(file))?);
        }
        Ok(DecomposedSequence { sequence_id: e.sequence_id.clone(), label: self.class_index(&e.label)?, kinds: out })
    }

    pub fn load_modes(&self, e: &RegistryEntry, base: &Path) -> Result<DmdModeSet> {
        let sidecar: ModeSetSidecar = read_json(base.join(&e.modes_sidecar))?;
        let t = read_stf(base.join(&e.modes))?;
        DmdModeSet::from_stf_and_sidecar(Some(&t), &sidecar)
    }
}

/// Writes one decomposition under `out_dir/<sequence_id>/`.
pub fn write_decomposition(out_dir: &Path, sequence_id: &str, d: &Decomposition) -> Result<(BTreeMap<SourceKind, PathBuf>, PathBuf, PathBuf)> {
    let dir = PathBuf::from(sequence_id);
    std::fs::create_dir_all(out_dir.join(&dir)).map_err(|e| Error::io(out_dir.join(&dir), e))?;
    let mut files = BTreeMap::new();
    for (k, t) in &d.kinds {
        let rel = dir.join(format!("{}.stf", k.name()));
        write_stf(t, out_dir.join(&rel))?;
        files.insert(*k, rel);
    }
    let (t, sidecar) = d.modes.to_stf_and_sidecar()?;
    let modes = dir.join("modes.stf");
    let modes_sidecar = dir.join("modes.json");
    write_stf(&t.expect("HODMD keeps at least one mode"), out_dir.join(&modes))?;
    write_json(&sidecar, out_dir.join(&modes_sidecar))?;
    Ok((files, modes, modes_sidecar))
}

enum Outcome {
    Done(RegistryEntry, PhaseTimings),
    Skipped(SkippedSequence),
}

/// Decomposes every manifest sequence into `out_dir` using `jobs` workers.
/// Sequences too short for HODMD are recorded as skipped. Output does not
/// depend on `jobs`.
pub fn build_registry(manifest: &SequenceManifest, base: &Path, out_dir: &Path, cfg: &DecomposeConfig, jobs: usize) -> Result<RegistryIndex> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let classes = manifest.class_names();
    let work = |entry: &crate::manifest::ManifestEntry| -> Result<Vec<Outcome>> {
        let label = entry
            .label
            .clone()
            .ok_or_else(|| Error::Manifest(format!("{}: training data needs a label", entry.sequence_id)))?;
        let seq = manifest.load_sequence(entry, base)?;
        let mut outcomes = Vec::new();
        for s in homogenize(&seq, cfg)? {
            match decompose_sequence(&s, cfg) {
                Ok(d) => {
                    let (files, modes, modes_sidecar) = write_decomposition(out_dir, &s.sequence_id, &d)?;
                    let e = RegistryEntry {
                        sequence_id: s.sequence_id.clone(),
                        source_id: entry.sequence_id.clone(),
                        label: label.clone(),
                        split: entry.split,
                        frames: s.num_frames(),
                        files,
                        modes,
                        modes_sidecar,
                    };
                    outcomes.push(Outcome::Done(e, d.timings));
                }
                Err(err @ (Error::BelowMinSnapshots { .. } | Error::InsufficientSnapshots { .. })) => {
                    outcomes.push(Outcome::Skipped(SkippedSequence { sequence_id: s.sequence_id.clone(), reason: err.to_string() }));
                }
                Err(err) => return Err(err),
            }
        }
        Ok(outcomes)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let results: Vec<Result<Vec<Outcome>>> = pool.install(|| manifest.entries.par_iter().map(work).collect());

    let mut index = RegistryIndex { classes, config: *cfg, entries: Vec::new(), skipped: Vec::new() };
    let mut timings = BTreeMap::new();
    for r in results {
        for o in r? {
            match o {
                Outcome::Done(e, t) => {
                    timings.insert(e.sequence_id.clone(), t);
                    index.entries.push(e);
                }
                Outcome::Skipped(s) => index.skipped.push(s),
            }
        }
    }
    write_json(&index, out_dir.join(INDEX_FILE))?;
    write_json(&timings, out_dir.join(TIMINGS_FILE))?;
    Ok(index)
}

/// A training case over a registry with a sequence-level split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub case: usize,
    pub kinds: Vec<SourceKind>,
    /// Kind used for validation and test images.
    pub test_kind: SourceKind,
    pub classes: Vec<String>,
    /// Registry index path, relative to the spec file.
    pub registry: PathBuf,
    pub fractions: [f64; 3],
    pub seed: u64,
    /// Registry sequence ids per split.
    pub splits: BTreeMap<Split, Vec<String>>,
}

pub const DEFAULT_TEST_KIND: SourceKind = SourceKind::HodmdRecon;

/// Splits by source sequence, so sub-sequences of one recording never span
/// splits. Manifest-provided splits are used when every entry carries one.
pub fn build_dataset(index: &RegistryIndex, registry: PathBuf, case: usize, fractions: [f64; 3], seed: u64, test_kind: SourceKind) -> Result<DatasetSpec> {
    let kinds = case_kinds(case)?;
    let source_split: BTreeMap<String, Split> = if !index.entries.is_empty() && index.entries.iter().all(|e| e.split.is_some()) {
        index.entries.iter().map(|e| (e.source_id.clone(), e.split.unwrap())).collect()
    } else {
        let mut sources: BTreeMap<&str, usize> = BTreeMap::new();
        for e in &index.entries {
            sources.insert(&e.source_id, index.class_index(&e.label)?);
        }
        let items: Vec<(String, usize)> = sources.into_iter().map(|(s, c)| (s.to_string(), c)).collect();
        split_sequences(&items, fractions, seed)?.assignment
    };
    let derived: Vec<(&str, Split)> = index.entries.iter().map(|e| (e.source_id.as_str(), source_split[&e.source_id])).collect();
    let leaked = leaked_sources(derived.iter().copied());
    if !leaked.is_empty() {
        return Err(Error::Manifest(format!("sources span several splits: {leaked:?}")));
    }
    let mut splits: BTreeMap<Split, Vec<String>> = Split::ALL.into_iter().map(|s| (s, Vec::new())).collect();
    for e in &index.entries {
        splits.get_mut(&source_split[&e.source_id]).unwrap().push(e.sequence_id.clone());
    }
    Ok(DatasetSpec { case, kinds, test_kind, classes: index.classes.clone(), registry, fractions, seed, splits })
}

impl DatasetSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<(Self, PathBuf)> {
        let path = path.as_ref();
        let spec: Self = read_json(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((spec, base))
    }

    pub fn registry_path(&self, base: &Path) -> PathBuf {
        base.join(&self.registry)
    }

    /// Kinds loaded for `split`: the case kinds for training, the test kind otherwise.
    pub fn kinds_for(&self, split: Split) -> Vec<SourceKind> {
        match split {
            Split::Train => self.kinds.clone(),
            _ => vec![self.test_kind],
        }
    }

    pub fn sequences(&self, base: &Path, split: Split) -> Result<Vec<DecomposedSequence>> {
        let (index, rbase) = RegistryIndex::load(self.registry_path(base))?;
        let kinds = self.kinds_for(split);
        let ids = self.splits.get(&split).cloned().unwrap_or_default();
        ids.iter()
            .map(|id| {
                let e = index
                    .entries
                    .iter()
                    .find(|e| &e.sequence_id == id)
                    .ok_or_else(|| Error::Manifest(format!("sequence {id:?} missing from registry")))?;
                index.load_entry(e, &rbase, &kinds)
            })
            .collect()
    }

    pub fn samples(&self, base: &Path, split: Split) -> Result<Vec<SampleRecord>> {
        let seqs = self.sequences(base, split)?;
        match split {
            Split::Train => assemble_case(self.case, &seqs),
            _ => Ok(seqs.iter().map(|s| s.samples(self.test_kind)).collect::<Result<Vec<_>>>()?.concat()),
        }
    }
}
