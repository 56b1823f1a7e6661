//! Dense f32 tensors, snapshot sequences and the `STF` container format.
//!
//! An STF file is laid out as
//!
//! ```text
//! b"MDK1" | rank: u32 LE | rank x extent: u64 LE | payload: f32 LE (row-major)
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const STF_MAGIC: [u8; 4] = *b"MDK1";

/// Row-major dense tensor of `f32` values.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        check_dims(&dims)?;
        let n = dims.iter().product::<usize>();
        if n != data.len() {
            return Err(Error::InvalidShape {
                dims,
                reason: "product of extents does not match data length",
            });
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        check_dims(&dims)?;
        let n = dims.iter().product();
        Ok(Self { dims, data: vec![0.0; n] })
    }

    /// Builds a tensor from `f64` values, rounding to the nearest `f32`.
    pub fn from_f64(dims: Vec<usize>, data: &[f64]) -> Result<Self> {
        Self::new(dims, data.iter().map(|&v| v as f32).collect())
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    /// Returns the sub-tensor at `index` along the leading dimension.
    pub fn slice_outer(&self, index: usize) -> Result<Tensor> {
        if self.rank() < 2 || index >= self.dims[0] {
            return Err(Error::InvalidArgument(format!(
                "outer index {index} out of range for dims {:?}",
                self.dims
            )));
        }
        let inner: usize = self.dims[1..].iter().product();
        Tensor::new(
            self.dims[1..].to_vec(),
            self.data[index * inner..(index + 1) * inner].to_vec(),
        )
    }

    /// Stacks equally shaped tensors along a new leading dimension.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = items.first().ok_or_else(|| {
            Error::InvalidArgument("cannot stack an empty list of tensors".into())
        })?;
        let mut dims = vec![items.len()];
        dims.extend_from_slice(first.dims());
        let mut data = Vec::with_capacity(items.len() * first.len());
        for t in items {
            if t.dims() != first.dims() {
                return Err(Error::InvalidShape {
                    dims: t.dims().to_vec(),
                    reason: "stacked tensors must share a shape",
                });
            }
            data.extend_from_slice(t.data());
        }
        Tensor::new(dims, data)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.is_empty() {
        return Err(Error::InvalidShape { dims: dims.to_vec(), reason: "rank must be at least 1" });
    }
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::InvalidShape { dims: dims.to_vec(), reason: "every extent must be positive" });
    }
    Ok(())
}

pub fn encode_stf(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 8 * t.rank() + 4 * t.len());
    out.extend_from_slice(&STF_MAGIC);
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.dims() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_stf(bytes: &[u8]) -> Result<Tensor> {
    let short = |expected: usize| Error::Truncated { expected: expected as u64, found: bytes.len() as u64 };
    if bytes.len() < 8 {
        if bytes.len() >= 4 && bytes[..4] != STF_MAGIC {
            return Err(Error::BadMagic { found: bytes[..4].try_into().unwrap() });
        }
        return Err(short(8));
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != STF_MAGIC {
        return Err(Error::BadMagic { found: magic });
    }
    let rank = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if rank == 0 {
        return Err(Error::InvalidShape { dims: vec![], reason: "rank must be at least 1" });
    }
    let header = rank
        .checked_mul(8)
        .and_then(|n| n.checked_add(8))
        .ok_or(Error::ExtentOverflow { dims: vec![] })?;
    if bytes.len() < header {
        return Err(short(header));
    }
    let raw: Vec<u64> = bytes[8..header]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let count = raw
        .iter()
        .try_fold(1u64, |acc, &d| acc.checked_mul(d))
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(header as u64))
        .filter(|&n| n <= usize::MAX as u64)
        .ok_or_else(|| Error::ExtentOverflow { dims: raw.clone() })?;
    let dims: Vec<usize> = raw.iter().map(|&d| d as usize).collect();
    check_dims(&dims)?;
    let total = count as usize;
    if bytes.len() < total {
        return Err(short(total));
    }
    if bytes.len() > total {
        return Err(Error::TrailingBytes { expected: count, found: bytes.len() as u64 });
    }
    let data = bytes[header..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(dims, data)
}

/// Writes `t` to `path`, going through a temporary sibling file and a rename
/// so readers never observe a partially written tensor.
pub fn write_stf(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_stf(t))
}

pub fn read_stf(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_stf(&bytes)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Writes pretty JSON atomically.
pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path.as_ref(), &bytes)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Axis-aligned pixel rectangle `(x0, y0, width, height)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roi {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

/// A labelled stack of frames `[K, N_y, N_x]` sampled every `dt` seconds.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotSequence {
    pub frames: Tensor,
    pub dt: f64,
    pub label: Option<String>,
    pub sequence_id: String,
    pub validity: Vec<bool>,
    pub roi: Option<Roi>,
}

impl SnapshotSequence {
    /// Creates a sequence with every frame marked valid and no ROI.
    pub fn new(sequence_id: impl Into<String>, frames: Tensor, dt: f64, label: Option<String>) -> Result<Self> {
        let k = frames.dims().first().copied().unwrap_or(0);
        let s = Self {
            frames,
            dt,
            label,
            sequence_id: sequence_id.into(),
            validity: vec![true; k],
            roi: None,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.rank() != 3 {
            return Err(Error::InvalidSequence(format!(
                "{}: frames must be rank 3 [K, N_y, N_x], found {:?}",
                self.sequence_id,
                self.frames.dims()
            )));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidSequence(format!("{}: dt must be positive", self.sequence_id)));
        }
        if self.validity.len() != self.num_frames() {
            return Err(Error::InvalidSequence(format!(
                "{}: validity mask has {} entries for {} frames",
                self.sequence_id,
                self.validity.len(),
                self.num_frames()
            )));
        }
        if let Some(r) = self.roi {
            let inside = r.width > 0
                && r.height > 0
                && r.x0 + r.width <= self.width()
                && r.y0 + r.height <= self.height();
            if !inside {
                return Err(Error::InvalidSequence(format!(
                    "{}: roi {r:?} exceeds frame {}x{}",
                    self.sequence_id,
                    self.height(),
                    self.width()
                )));
            }
        }
        Ok(())
    }

    pub fn num_frames(&self) -> usize {
        self.frames.dims()[0]
    }

    pub fn height(&self) -> usize {
        self.frames.dims()[1]
    }

    pub fn width(&self) -> usize {
        self.frames.dims()[2]
    }

    pub fn frame(&self, k: usize) -> &[f32] {
        let n = self.height() * self.width();
        &self.frames.data()[k * n..(k + 1) * n]
    }
}

/// Snapshot matrix `[N_p, K]`: column `k` is frame `k` flattened row-major.
pub fn reshape_to_snapshot_matrix(s: &SnapshotSequence) -> Tensor {
    let k = s.num_frames();
    let np = s.height() * s.width();
    let src = s.frames.data();
    let mut data = vec![0.0f32; np * k];
    for (col, frame) in src.chunks_exact(np).enumerate() {
        for (p, &v) in frame.iter().enumerate() {
            data[p * k + col] = v;
        }
    }
    Tensor::new(vec![np, k], data).expect("snapshot matrix dims are positive")
}

/// Inverse of [`reshape_to_snapshot_matrix`].
pub fn snapshot_matrix_to_frames(m: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    if m.rank() != 2 || m.dims()[0] != height * width {
        return Err(Error::InvalidShape {
            dims: m.dims().to_vec(),
            reason: "snapshot matrix rows must equal height * width",
        });
    }
    let (np, k) = (m.dims()[0], m.dims()[1]);
    let mut data = vec![0.0f32; np * k];
    for p in 0..np {
        for col in 0..k {
            data[col * np + p] = m.data()[p * k + col];
        }
    }
    Tensor::new(vec![k, height, width], data)
}
