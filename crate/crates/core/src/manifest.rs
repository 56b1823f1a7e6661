//! JSON sequence manifest.
//!
//! ```json
//! {
//!   "classes": ["healthy", "infarct"],
//!   "entries": [
//!     { "sequence_id": "s0", "path": "s0.stf", "label": "healthy", "dt": 0.004,
//!       "split": "train", "roi": {"x0": 0, "y0": 0, "width": 32, "height": 32},
//!       "validity": [[true, 30], [false, 2], [true, 10]] }
//!   ]
//! }
//! ```
//!
//! Paths are resolved relative to the directory holding the manifest.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{read_stf, Roi, SnapshotSequence};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub sequence_id: String,
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub dt: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roi: Option<Roi>,
    /// Run-length encoded validity mask; absent means every frame is valid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validity: Option<Vec<(bool, usize)>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SequenceManifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<Vec<String>>,
    pub entries: Vec<ManifestEntry>,
}

impl SequenceManifest {
    /// Parses and validates a manifest. Every referenced file must exist.
    pub fn load(path: impl AsRef<Path>) -> Result<(Self, PathBuf)> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let manifest: SequenceManifest =
            serde_json::from_slice(&bytes).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        manifest.validate(&base)?;
        Ok((manifest, base))
    }

    pub fn validate(&self, base: &Path) -> Result<()> {
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            if !seen.insert(e.sequence_id.as_str()) {
                return Err(Error::Manifest(format!("duplicate sequence_id {}", e.sequence_id)));
            }
            if !(e.dt > 0.0 && e.dt.is_finite()) {
                return Err(Error::Manifest(format!("{}: dt must be positive", e.sequence_id)));
            }
            let file = base.join(&e.path);
            if !file.is_file() {
                return Err(Error::Manifest(format!("{}: missing file {}", e.sequence_id, file.display())));
            }
            if let (Some(classes), Some(label)) = (&self.classes, &e.label) {
                if !classes.contains(label) {
                    return Err(Error::Manifest(format!("{}: unknown label {label}", e.sequence_id)));
                }
            }
        }
        Ok(())
    }

    /// Class names in index order: the explicit `classes` list, or the sorted
    /// distinct labels.
    pub fn class_names(&self) -> Vec<String> {
        match &self.classes {
            Some(c) => c.clone(),
            None => self
                .entries
                .iter()
                .filter_map(|e| e.label.clone())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect(),
        }
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.class_names().iter().position(|c| c == label)
    }

    pub fn load_sequence(&self, entry: &ManifestEntry, base: &Path) -> Result<SnapshotSequence> {
        let frames = read_stf(base.join(&entry.path))?;
        if frames.rank() != 3 {
            return Err(Error::Manifest(format!(
                "{}: expected rank-3 frames, found dims {:?}",
                entry.sequence_id,
                frames.dims()
            )));
        }
        let k = frames.dims()[0];
        let validity = match &entry.validity {
            Some(runs) => decode_runs(runs),
            None => vec![true; k],
        };
        let s = SnapshotSequence {
            frames,
            dt: entry.dt,
            label: entry.label.clone(),
            sequence_id: entry.sequence_id.clone(),
            validity,
            roi: entry.roi,
        };
        s.validate().map_err(|e| Error::Manifest(e.to_string()))?;
        Ok(s)
    }
}

pub fn encode_runs(mask: &[bool]) -> Vec<(bool, usize)> {
    let mut runs: Vec<(bool, usize)> = Vec::new();
    for &v in mask {
        match runs.last_mut() {
            Some((last, n)) if *last == v => *n += 1,
            _ => runs.push((v, 1)),
        }
    }
    runs
}

pub fn decode_runs(runs: &[(bool, usize)]) -> Vec<bool> {
    runs.iter().flat_map(|&(v, n)| std::iter::repeat_n(v, n)).collect()
}
