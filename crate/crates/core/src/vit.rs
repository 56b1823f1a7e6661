//! Vision transformer with shifted patch tokenisation (SPT) and locality self
//! attention (LSA), with a hand-written backward pass.
//!
//! Layout: SPT -> `num_blocks` pre-norm blocks {LSA + skip, MLP + skip} ->
//! flatten all tokens -> dropout -> GELU dense head layers -> linear -> softmax.
//! All arithmetic is `f64`; parameters are stored as `f32` on disk.

use std::path::Path;

use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{read_json, read_stf, write_json, write_stf, Tensor};

pub const LN_EPS: f64 = 1e-6;
pub const SPT_CHANNELS: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VitConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub num_blocks: usize,
    pub num_heads: usize,
    pub proj_dim: usize,
    pub block_dropout: f64,
    /// Hidden sizes of the per-block MLP; the last must equal `proj_dim`.
    pub mlp_dims: Vec<usize>,
    pub head_dropout: f64,
    pub head_dims: Vec<usize>,
    pub num_classes: usize,
}

impl VitConfig {
    pub fn full(num_classes: usize) -> Self {
        Self {
            image_size: 256,
            patch_size: 32,
            num_blocks: 8,
            num_heads: 4,
            proj_dim: 64,
            block_dropout: 0.1,
            mlp_dims: vec![128, 64],
            head_dropout: 0.5,
            head_dims: vec![1024, 512],
            num_classes,
        }
    }

    /// Gradient-check size: image 16, patch 8, one block, two heads, width 8.
    pub fn tiny(num_classes: usize) -> Self {
        Self {
            image_size: 16,
            patch_size: 8,
            num_blocks: 1,
            num_heads: 2,
            proj_dim: 8,
            block_dropout: 0.1,
            mlp_dims: vec![16, 8],
            head_dropout: 0.5,
            head_dims: vec![16, 12],
            num_classes,
        }
    }

    /// Small model for 32x32 toy data.
    pub fn toy(num_classes: usize) -> Self {
        Self {
            image_size: 32,
            patch_size: 8,
            num_blocks: 2,
            num_heads: 4,
            proj_dim: 32,
            block_dropout: 0.1,
            mlp_dims: vec![64, 32],
            head_dropout: 0.5,
            head_dims: vec![128, 64],
            num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("vit config: {m}")));
        if self.patch_size == 0 || self.image_size == 0 || self.image_size % self.patch_size != 0 {
            return bad("image_size must be a positive multiple of patch_size");
        }
        if self.tokens() < 2 {
            return bad("need at least two patches for masked attention");
        }
        if self.num_heads == 0 || self.proj_dim == 0 || self.proj_dim % self.num_heads != 0 {
            return bad("proj_dim must be a positive multiple of num_heads");
        }
        if self.mlp_dims.last() != Some(&self.proj_dim) {
            return bad("last mlp dim must equal proj_dim");
        }
        if self.num_classes < 2 {
            return bad("need at least two classes");
        }
        if !(0.0..1.0).contains(&self.block_dropout) || !(0.0..1.0).contains(&self.head_dropout) {
            return bad("dropout rates must lie in [0, 1)");
        }
        if self.mlp_dims.contains(&0) || self.head_dims.contains(&0) {
            return bad("layer widths must be positive");
        }
        Ok(())
    }

    pub fn tokens(&self) -> usize {
        let g = self.image_size / self.patch_size.max(1);
        g * g
    }

    pub fn raw_dim(&self) -> usize {
        self.patch_size * self.patch_size * SPT_CHANNELS
    }

    pub fn head_dim(&self) -> usize {
        self.proj_dim / self.num_heads
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let (r, d, t, h) = (self.raw_dim(), self.proj_dim, self.tokens(), self.num_heads);
        let dense = |i: usize, o: usize| i * o + o;
        let spt = 2 * r + dense(r, d) + t * d;
        let mut mlp = 0;
        let mut width = d;
        for &m in &self.mlp_dims {
            mlp += dense(width, m);
            width = m;
        }
        let block = 2 * d + 4 * dense(d, d) + h + 2 * d + mlp;
        let mut head = 0;
        let mut width = t * d;
        for &m in &self.head_dims {
            head += dense(width, m);
            width = m;
        }
        head += dense(width, self.num_classes);
        spt + self.num_blocks * block + head
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams {
    pub ln1_g: Mat<f64>,
    pub ln1_b: Mat<f64>,
    pub wq: Mat<f64>,
    pub bq: Mat<f64>,
    pub wk: Mat<f64>,
    pub bk: Mat<f64>,
    pub wv: Mat<f64>,
    pub bv: Mat<f64>,
    pub wo: Mat<f64>,
    pub bo: Mat<f64>,
    /// `1 x num_heads` softmax temperatures.
    pub tau: Mat<f64>,
    pub ln2_g: Mat<f64>,
    pub ln2_b: Mat<f64>,
    pub mlp_w: Vec<Mat<f64>>,
    pub mlp_b: Vec<Mat<f64>>,
}

/// All trainable tensors. Vectors are `1 x n` matrices; dense weights are
/// `in x out` and act on row vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct VitParams {
    pub spt_ln_g: Mat<f64>,
    pub spt_ln_b: Mat<f64>,
    pub proj_w: Mat<f64>,
    pub proj_b: Mat<f64>,
    pub pos: Mat<f64>,
    pub blocks: Vec<BlockParams>,
    pub head_w: Vec<Mat<f64>>,
    pub head_b: Vec<Mat<f64>>,
    pub cls_w: Mat<f64>,
    pub cls_b: Mat<f64>,
}

fn glorot(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Mat::from_fn(rows, cols, |_, _| rng.random_range(-limit..limit))
}

impl VitParams {
    /// Glorot-uniform weights, zero biases, unit norm gains, small uniform
    /// positional embeddings and `tau = sqrt(proj_dim / num_heads)`. Values
    /// are rounded to `f32`.
    pub fn init(cfg: &VitConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (r, d, t, h) = (cfg.raw_dim(), cfg.proj_dim, cfg.tokens(), cfg.num_heads);
        let zeros = |n: usize| Mat::<f64>::zeros(1, n);
        let ones = |n: usize| Mat::from_fn(1, n, |_, _| 1.0);
        let proj_w = glorot(r, d, &mut rng);
        let pos = Mat::from_fn(t, d, |_, _| rng.random_range(-0.05..0.05));
        let mut blocks = Vec::with_capacity(cfg.num_blocks);
        for _ in 0..cfg.num_blocks {
            let (wq, wk, wv, wo) = (glorot(d, d, &mut rng), glorot(d, d, &mut rng), glorot(d, d, &mut rng), glorot(d, d, &mut rng));
            let mut mlp_w = Vec::new();
            let mut mlp_b = Vec::new();
            let mut width = d;
            for &m in &cfg.mlp_dims {
                mlp_w.push(glorot(width, m, &mut rng));
                mlp_b.push(zeros(m));
                width = m;
            }
            blocks.push(BlockParams {
                ln1_g: ones(d),
                ln1_b: zeros(d),
                wq,
                bq: zeros(d),
                wk,
                bk: zeros(d),
                wv,
                bv: zeros(d),
                wo,
                bo: zeros(d),
                tau: Mat::from_fn(1, h, |_, _| (cfg.head_dim() as f64).sqrt()),
                ln2_g: ones(d),
                ln2_b: zeros(d),
                mlp_w,
                mlp_b,
            });
        }
        let mut head_w = Vec::new();
        let mut head_b = Vec::new();
        let mut width = t * d;
        for &m in &cfg.head_dims {
            head_w.push(glorot(width, m, &mut rng));
            head_b.push(zeros(m));
            width = m;
        }
        let cls_w = glorot(width, cfg.num_classes, &mut rng);
        let mut p = Self {
            spt_ln_g: ones(r),
            spt_ln_b: zeros(r),
            proj_w,
            proj_b: zeros(d),
            pos,
            blocks,
            head_w,
            head_b,
            cls_w,
            cls_b: zeros(cfg.num_classes),
        };
        p.round_to_f32();
        Ok(p)
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.tensors_mut().into_iter().for_each(|m| m.fill(0.0));
        z
    }

    /// Stable parameter names, in the order of `tensors`/`tensors_mut`.
    pub fn names(&self) -> Vec<String> {
        let mut n: Vec<String> = ["spt.ln.gamma", "spt.ln.beta", "spt.proj.weight", "spt.proj.bias", "pos_embedding"]
            .map(String::from)
            .into();
        for (i, b) in self.blocks.iter().enumerate() {
            for s in [
                "ln1.gamma", "ln1.beta", "attn.query.weight", "attn.query.bias", "attn.key.weight", "attn.key.bias",
                "attn.value.weight", "attn.value.bias", "attn.out.weight", "attn.out.bias", "attn.tau", "ln2.gamma", "ln2.beta",
            ] {
                n.push(format!("block{i}.{s}"));
            }
            for j in 0..b.mlp_w.len() {
                n.push(format!("block{i}.mlp{j}.weight"));
                n.push(format!("block{i}.mlp{j}.bias"));
            }
        }
        for j in 0..self.head_w.len() {
            n.push(format!("head{j}.weight"));
            n.push(format!("head{j}.bias"));
        }
        n.push("classifier.weight".into());
        n.push("classifier.bias".into());
        n
    }

    pub fn tensors(&self) -> Vec<&Mat<f64>> {
        let mut v = vec![&self.spt_ln_g, &self.spt_ln_b, &self.proj_w, &self.proj_b, &self.pos];
        for b in &self.blocks {
            v.extend([
                &b.ln1_g, &b.ln1_b, &b.wq, &b.bq, &b.wk, &b.bk, &b.wv, &b.bv, &b.wo, &b.bo, &b.tau, &b.ln2_g, &b.ln2_b,
            ]);
            for (w, bias) in b.mlp_w.iter().zip(&b.mlp_b) {
                v.extend([w, bias]);
            }
        }
        for (w, bias) in self.head_w.iter().zip(&self.head_b) {
            v.extend([w, bias]);
        }
        v.extend([&self.cls_w, &self.cls_b]);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Mat<f64>> {
        let mut v = vec![&mut self.spt_ln_g, &mut self.spt_ln_b, &mut self.proj_w, &mut self.proj_b, &mut self.pos];
        for b in &mut self.blocks {
            v.extend([
                &mut b.ln1_g, &mut b.ln1_b, &mut b.wq, &mut b.bq, &mut b.wk, &mut b.bk, &mut b.wv, &mut b.bv, &mut b.wo,
                &mut b.bo, &mut b.tau, &mut b.ln2_g, &mut b.ln2_b,
            ]);
            for (w, bias) in b.mlp_w.iter_mut().zip(b.mlp_b.iter_mut()) {
                v.extend([w, bias]);
            }
        }
        for (w, bias) in self.head_w.iter_mut().zip(self.head_b.iter_mut()) {
            v.extend([w, bias]);
        }
        v.extend([&mut self.cls_w, &mut self.cls_b]);
        v
    }

    pub fn count(&self) -> usize {
        self.tensors().iter().map(|m| m.nrows() * m.ncols()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|m| (0..m.ncols()).all(|j| m.col_as_slice(j).iter().all(|v| v.is_finite())))
    }

    pub fn round_to_f32(&mut self) {
        for m in self.tensors_mut() {
            for j in 0..m.ncols() {
                m.col_as_slice_mut(j).iter_mut().for_each(|v| *v = *v as f32 as f64);
            }
        }
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &Self, scale: f64) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for j in 0..a.ncols() {
                for (x, y) in a.col_as_slice_mut(j).iter_mut().zip(b.col_as_slice(j)) {
                    *x += scale * y;
                }
            }
        }
    }
}

pub(crate) fn mat_to_tensor(m: &Mat<f64>) -> Tensor {
    Tensor::from_f64(vec![m.nrows(), m.ncols()], &(0..m.nrows() * m.ncols()).map(|p| m[(p / m.ncols(), p % m.ncols())]).collect::<Vec<_>>())
        .expect("non-empty parameter")
}

pub(crate) fn tensor_to_mat(t: &Tensor, rows: usize, cols: usize) -> Result<Mat<f64>> {
    if t.dims() != [rows, cols] {
        return Err(Error::InvalidShape { dims: t.dims().to_vec(), reason: "parameter shape differs from config" });
    }
    Ok(Mat::from_fn(rows, cols, |i, j| t.data()[i * cols + j] as f64))
}

// ---------------------------------------------------------------------------
// Building blocks

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2)) + x * (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn map(m: &Mat<f64>, f: impl Fn(f64) -> f64) -> Mat<f64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| f(m[(i, j)]))
}

fn hadamard(a: &Mat<f64>, b: &Mat<f64>) -> Mat<f64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * b[(i, j)])
}

fn linear(x: &Mat<f64>, w: &Mat<f64>, b: &Mat<f64>) -> Mat<f64> {
    let mut y = x * w;
    for j in 0..y.ncols() {
        let bj = b[(0, j)];
        y.col_as_slice_mut(j).iter_mut().for_each(|v| *v += bj);
    }
    y
}

fn col_sums(m: &Mat<f64>) -> Mat<f64> {
    Mat::from_fn(1, m.ncols(), |_, j| m.col_as_slice(j).iter().sum())
}

fn add_into(acc: &mut Mat<f64>, m: &Mat<f64>) {
    for j in 0..acc.ncols() {
        for (a, b) in acc.col_as_slice_mut(j).iter_mut().zip(m.col_as_slice(j)) {
            *a += b;
        }
    }
}

/// Inverted dropout mask (entries 0 or `1/(1-p)`), or `None` when inactive.
fn dropout_mask(rows: usize, cols: usize, p: f64, rng: Option<&mut ChaCha8Rng>) -> Option<Mat<f64>> {
    let rng = rng?;
    if p <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - p);
    let mut m = Mat::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = if rng.random::<f64>() < p { 0.0 } else { keep };
        }
    }
    Some(m)
}

fn apply_mask(x: Mat<f64>, mask: &Option<Mat<f64>>) -> Mat<f64> {
    match mask {
        Some(m) => hadamard(&x, m),
        None => x,
    }
}

struct LnCache {
    xhat: Mat<f64>,
    inv_std: Vec<f64>,
}

/// Row-wise layer norm.
fn layer_norm(x: &Mat<f64>, g: &Mat<f64>, b: &Mat<f64>) -> (Mat<f64>, LnCache) {
    let (n, d) = (x.nrows(), x.ncols());
    let mut xhat = Mat::zeros(n, d);
    let mut inv_std = Vec::with_capacity(n);
    for i in 0..n {
        let mean = (0..d).map(|j| x[(i, j)]).sum::<f64>() / d as f64;
        let var = (0..d).map(|j| (x[(i, j)] - mean).powi(2)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        for j in 0..d {
            xhat[(i, j)] = (x[(i, j)] - mean) * inv;
        }
        inv_std.push(inv);
    }
    let y = Mat::from_fn(n, d, |i, j| xhat[(i, j)] * g[(0, j)] + b[(0, j)]);
    (y, LnCache { xhat, inv_std })
}

fn layer_norm_back(dy: &Mat<f64>, c: &LnCache, g: &Mat<f64>, dg: &mut Mat<f64>, db: &mut Mat<f64>) -> Mat<f64> {
    let (n, d) = (dy.nrows(), dy.ncols());
    let mut dx = Mat::zeros(n, d);
    for i in 0..n {
        let mut mean_dxh = 0.0;
        let mut mean_dxh_xh = 0.0;
        for j in 0..d {
            dg[(0, j)] += dy[(i, j)] * c.xhat[(i, j)];
            db[(0, j)] += dy[(i, j)];
            let dxh = dy[(i, j)] * g[(0, j)];
            mean_dxh += dxh;
            mean_dxh_xh += dxh * c.xhat[(i, j)];
        }
        mean_dxh /= d as f64;
        mean_dxh_xh /= d as f64;
        for j in 0..d {
            let dxh = dy[(i, j)] * g[(0, j)];
            dx[(i, j)] = c.inv_std[i] * (dxh - mean_dxh - c.xhat[(i, j)] * mean_dxh_xh);
        }
    }
    dx
}

/// Row softmax of `s` with the diagonal excluded (its weight is exactly 0).
fn masked_softmax(s: &Mat<f64>) -> Mat<f64> {
    let n = s.nrows();
    let mut p = Mat::zeros(n, n);
    for i in 0..n {
        let max = (0..n).filter(|&j| j != i).map(|j| s[(i, j)]).fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for j in (0..n).filter(|&j| j != i) {
            let e = (s[(i, j)] - max).exp();
            p[(i, j)] = e;
            sum += e;
        }
        for j in 0..n {
            p[(i, j)] /= sum;
        }
    }
    p
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

// ---------------------------------------------------------------------------
// Shifted patch tokenisation

/// The five SPT channels of a square image: the image itself and its shifts
/// by `(+-s, +-s)`, `s = floor(patch / 2)`, zero padded. Channel `c` at
/// `(y, x)` reads the source at `(y + dy_c, x + dx_c)`.
pub fn spt_channels(image: &[f32], cfg: &VitConfig) -> Result<[Vec<f64>; SPT_CHANNELS]> {
    let n = cfg.image_size;
    if image.len() != n * n {
        return Err(Error::InvalidShape { dims: vec![image.len()], reason: "image must be image_size x image_size" });
    }
    let s = (cfg.patch_size / 2) as isize;
    let shifts = [(0, 0), (-s, -s), (-s, s), (s, -s), (s, s)];
    Ok(shifts.map(|(dy, dx)| {
        (0..n * n)
            .map(|p| {
                let (y, x) = ((p / n) as isize + dy, (p % n) as isize + dx);
                if y < 0 || x < 0 || y >= n as isize || x >= n as isize {
                    0.0
                } else {
                    image[y as usize * n + x as usize] as f64
                }
            })
            .collect()
    }))
}

/// Raw patch matrix `[T, patch^2 * 5]`; entry `(iy * patch + ix) * 5 + c`.
pub fn spt_patches(image: &[f32], cfg: &VitConfig) -> Result<Mat<f64>> {
    let ch = spt_channels(image, cfg)?;
    let (n, p) = (cfg.image_size, cfg.patch_size);
    let g = n / p;
    Ok(Mat::from_fn(cfg.tokens(), cfg.raw_dim(), |t, r| {
        let (c, pix) = (r % SPT_CHANNELS, r / SPT_CHANNELS);
        let (y, x) = ((t / g) * p + pix / p, (t % g) * p + pix % p);
        ch[c][y * n + x]
    }))
}

struct SptCache {
    ln: LnCache,
    z: Mat<f64>,
}

fn spt_forward(image: &[f32], cfg: &VitConfig, p: &VitParams) -> Result<(Mat<f64>, SptCache)> {
    let raw = spt_patches(image, cfg)?;
    let (z, ln) = layer_norm(&raw, &p.spt_ln_g, &p.spt_ln_b);
    let mut e = linear(&z, &p.proj_w, &p.proj_b);
    add_into(&mut e, &p.pos);
    Ok((e, SptCache { ln, z }))
}

/// Token embeddings `[T, proj_dim]`.
pub fn spt_tokenize(image: &[f32], cfg: &VitConfig, p: &VitParams) -> Result<Mat<f64>> {
    cfg.validate()?;
    Ok(spt_forward(image, cfg, p)?.0)
}

// ---------------------------------------------------------------------------
// Locality self attention and blocks

pub struct LsaOutput {
    /// Output-projected heads `[T, D]` (before the skip connection).
    pub out: Mat<f64>,
    /// Post-softmax attention per head, before dropout.
    pub weights: Vec<Mat<f64>>,
}

struct AttnCache {
    q: Mat<f64>,
    k: Mat<f64>,
    v: Mat<f64>,
    scores: Vec<Mat<f64>>,
    weights: Vec<Mat<f64>>,
    masks: Vec<Option<Mat<f64>>>,
    o: Mat<f64>,
}

fn lsa_forward(a: &Mat<f64>, b: &BlockParams, cfg: &VitConfig, mut rng: Option<&mut ChaCha8Rng>) -> Result<(Mat<f64>, AttnCache)> {
    let (t, dh) = (a.nrows(), cfg.head_dim());
    if t < 2 {
        return Err(Error::InvalidArgument("attention needs at least two tokens".into()));
    }
    let q = linear(a, &b.wq, &b.bq);
    let k = linear(a, &b.wk, &b.bk);
    let v = linear(a, &b.wv, &b.bv);
    let mut o = Mat::zeros(t, cfg.proj_dim);
    let (mut scores, mut weights, mut masks) = (Vec::new(), Vec::new(), Vec::new());
    for h in 0..cfg.num_heads {
        let tau = b.tau[(0, h)];
        if !(tau > 0.0) {
            return Err(Error::NonPositiveTemperature(tau));
        }
        let (qh, kh, vh) = (q.subcols(h * dh, dh), k.subcols(h * dh, dh), v.subcols(h * dh, dh));
        let r = qh * kh.transpose();
        let pw = masked_softmax(&map(&r, |x| x / tau));
        let mask = dropout_mask(t, t, cfg.block_dropout, rng.as_deref_mut());
        let pd = apply_mask(pw.clone(), &mask);
        o.subcols_mut(h * dh, dh).copy_from(&pd * vh);
        scores.push(r);
        weights.push(pw);
        masks.push(mask);
    }
    let y = linear(&o, &b.wo, &b.bo);
    Ok((y, AttnCache { q, k, v, scores, weights, masks, o }))
}

/// Multi-head LSA on `tokens` (already normalised): per head
/// `softmax(Q K^T / tau)` with the diagonal masked out.
pub fn lsa_attention(tokens: &Mat<f64>, b: &BlockParams, cfg: &VitConfig, rng: Option<&mut ChaCha8Rng>) -> Result<LsaOutput> {
    let (out, c) = lsa_forward(tokens, b, cfg, rng)?;
    Ok(LsaOutput { out, weights: c.weights })
}

struct BlockCache {
    ln1: LnCache,
    a: Mat<f64>,
    attn: AttnCache,
    ln2: LnCache,
    /// Inputs to each MLP layer, its pre-activation, and its dropout mask.
    mlp_in: Vec<Mat<f64>>,
    mlp_pre: Vec<Mat<f64>>,
    mlp_mask: Vec<Option<Mat<f64>>>,
}

fn block_forward(x: &Mat<f64>, b: &BlockParams, cfg: &VitConfig, mut rng: Option<&mut ChaCha8Rng>) -> Result<(Mat<f64>, BlockCache)> {
    let (a, ln1) = layer_norm(x, &b.ln1_g, &b.ln1_b);
    let (y, attn) = lsa_forward(&a, b, cfg, rng.as_deref_mut())?;
    let mut x1 = x.clone();
    add_into(&mut x1, &y);
    let (bn, ln2) = layer_norm(&x1, &b.ln2_g, &b.ln2_b);
    let (mut mlp_in, mut mlp_pre, mut mlp_mask) = (Vec::new(), Vec::new(), Vec::new());
    let mut h = bn;
    for (w, bias) in b.mlp_w.iter().zip(&b.mlp_b) {
        let pre = linear(&h, w, bias);
        let mask = dropout_mask(pre.nrows(), pre.ncols(), cfg.block_dropout, rng.as_deref_mut());
        let next = apply_mask(map(&pre, gelu), &mask);
        mlp_in.push(h);
        mlp_pre.push(pre);
        mlp_mask.push(mask);
        h = next;
    }
    add_into(&mut x1, &h);
    Ok((x1, BlockCache { ln1, a, attn, ln2, mlp_in, mlp_pre, mlp_mask }))
}

fn block_backward(dx2: &Mat<f64>, b: &BlockParams, c: &BlockCache, cfg: &VitConfig, g: &mut BlockParams) -> Mat<f64> {
    let mut dh = dx2.clone();
    for j in (0..b.mlp_w.len()).rev() {
        let dact = apply_mask(dh, &c.mlp_mask[j]);
        let dpre = hadamard(&dact, &map(&c.mlp_pre[j], gelu_grad));
        add_into(&mut g.mlp_w[j], &(c.mlp_in[j].transpose() * &dpre));
        add_into(&mut g.mlp_b[j], &col_sums(&dpre));
        dh = &dpre * b.mlp_w[j].transpose();
    }
    let mut dx1 = dx2.clone();
    add_into(&mut dx1, &layer_norm_back(&dh, &c.ln2, &b.ln2_g, &mut g.ln2_g, &mut g.ln2_b));

    let at = &c.attn;
    add_into(&mut g.wo, &(at.o.transpose() * &dx1));
    add_into(&mut g.bo, &col_sums(&dx1));
    let d_o = &dx1 * b.wo.transpose();
    let (t, dh_) = (dx1.nrows(), cfg.head_dim());
    let (mut dq, mut dk, mut dv) = (Mat::zeros(t, cfg.proj_dim), Mat::zeros(t, cfg.proj_dim), Mat::zeros(t, cfg.proj_dim));
    for h in 0..cfg.num_heads {
        let tau = b.tau[(0, h)];
        let (qh, kh, vh) = (at.q.subcols(h * dh_, dh_), at.k.subcols(h * dh_, dh_), at.v.subcols(h * dh_, dh_));
        let doh = d_o.subcols(h * dh_, dh_);
        let pw = &at.weights[h];
        let pd = apply_mask(pw.clone(), &at.masks[h]);
        dv.subcols_mut(h * dh_, dh_).copy_from(pd.transpose() * doh);
        let dpd = doh * vh.transpose();
        let dp = apply_mask(dpd, &at.masks[h]);
        let mut ds = Mat::zeros(t, t);
        for i in 0..t {
            let dot: f64 = (0..t).map(|j| dp[(i, j)] * pw[(i, j)]).sum();
            for j in 0..t {
                ds[(i, j)] = pw[(i, j)] * (dp[(i, j)] - dot);
            }
        }
        let mut dtau = 0.0;
        for i in 0..t {
            for j in 0..t {
                dtau -= ds[(i, j)] * at.scores[h][(i, j)];
            }
        }
        g.tau[(0, h)] += dtau / (tau * tau);
        let dr = map(&ds, |x| x / tau);
        dq.subcols_mut(h * dh_, dh_).copy_from(&dr * kh);
        dk.subcols_mut(h * dh_, dh_).copy_from(dr.transpose() * qh);
    }
    add_into(&mut g.wq, &(c.a.transpose() * &dq));
    add_into(&mut g.wk, &(c.a.transpose() * &dk));
    add_into(&mut g.wv, &(c.a.transpose() * &dv));
    add_into(&mut g.bq, &col_sums(&dq));
    add_into(&mut g.bk, &col_sums(&dk));
    add_into(&mut g.bv, &col_sums(&dv));
    let mut da = &dq * b.wq.transpose();
    add_into(&mut da, &(&dk * b.wk.transpose()));
    add_into(&mut da, &(&dv * b.wv.transpose()));
    add_into(&mut dx1, &layer_norm_back(&da, &c.ln1, &b.ln1_g, &mut g.ln1_g, &mut g.ln1_b));
    dx1
}

// ---------------------------------------------------------------------------
// Whole network

struct Cache {
    spt: SptCache,
    blocks: Vec<BlockCache>,
    flat_mask: Option<Mat<f64>>,
    head_in: Vec<Mat<f64>>,
    head_pre: Vec<Mat<f64>>,
    last: Mat<f64>,
    probs: Vec<f64>,
    logits: Vec<f64>,
}

fn forward_cached(image: &[f32], p: &VitParams, cfg: &VitConfig, mut rng: Option<&mut ChaCha8Rng>) -> Result<Cache> {
    let (mut x, spt) = spt_forward(image, cfg, p)?;
    let mut blocks = Vec::with_capacity(p.blocks.len());
    for b in &p.blocks {
        let (nx, c) = block_forward(&x, b, cfg, rng.as_deref_mut())?;
        x = nx;
        blocks.push(c);
    }
    let (t, d) = (x.nrows(), x.ncols());
    let flat = Mat::from_fn(1, t * d, |_, q| x[(q / d, q % d)]);
    let flat_mask = dropout_mask(1, t * d, cfg.head_dropout, rng.as_deref_mut());
    let mut h = apply_mask(flat, &flat_mask);
    let (mut head_in, mut head_pre) = (Vec::new(), Vec::new());
    for (w, bias) in p.head_w.iter().zip(&p.head_b) {
        let pre = linear(&h, w, bias);
        let next = map(&pre, gelu);
        head_in.push(h);
        head_pre.push(pre);
        h = next;
    }
    let z = linear(&h, &p.cls_w, &p.cls_b);
    let logits: Vec<f64> = (0..z.ncols()).map(|j| z[(0, j)]).collect();
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("network activations"));
    }
    let probs = softmax(&logits);
    Ok(Cache { spt, blocks, flat_mask, head_in, head_pre, last: h, probs, logits })
}

/// Class scores `P`. Dropout is active only when `rng` is given.
pub fn forward(image: &[f32], p: &VitParams, cfg: &VitConfig, rng: Option<&mut ChaCha8Rng>) -> Result<Vec<f64>> {
    Ok(forward_cached(image, p, cfg, rng)?.probs)
}

/// Cross-entropy of `P` against `label` and the gradient of every parameter.
pub fn backward(image: &[f32], label: usize, p: &VitParams, cfg: &VitConfig, rng: Option<&mut ChaCha8Rng>) -> Result<(f64, Vec<f64>, VitParams)> {
    if label >= cfg.num_classes {
        return Err(Error::InvalidArgument(format!("label {label} outside {} classes", cfg.num_classes)));
    }
    let c = forward_cached(image, p, cfg, rng)?;
    let max = c.logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + c.logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    let loss = lse - c.logits[label];

    let mut g = p.zeros_like();
    let dz = Mat::from_fn(1, cfg.num_classes, |_, j| c.probs[j] - f64::from(u8::from(j == label)));
    add_into(&mut g.cls_w, &(c.last.transpose() * &dz));
    add_into(&mut g.cls_b, &dz);
    let mut dh = &dz * p.cls_w.transpose();
    for j in (0..p.head_w.len()).rev() {
        let dpre = hadamard(&dh, &map(&c.head_pre[j], gelu_grad));
        add_into(&mut g.head_w[j], &(c.head_in[j].transpose() * &dpre));
        add_into(&mut g.head_b[j], &dpre);
        dh = &dpre * p.head_w[j].transpose();
    }
    let dflat = apply_mask(dh, &c.flat_mask);
    let (t, d) = (cfg.tokens(), cfg.proj_dim);
    let mut dx = Mat::from_fn(t, d, |i, j| dflat[(0, i * d + j)]);
    for (i, b) in p.blocks.iter().enumerate().rev() {
        dx = block_backward(&dx, b, &c.blocks[i], cfg, &mut g.blocks[i]);
    }
    add_into(&mut g.pos, &dx);
    add_into(&mut g.proj_b, &col_sums(&dx));
    add_into(&mut g.proj_w, &(c.spt.z.transpose() * &dx));
    let dz_raw = &dx * p.proj_w.transpose();
    layer_norm_back(&dz_raw, &c.spt.ln, &p.spt_ln_g, &mut g.spt_ln_g, &mut g.spt_ln_b);
    Ok((loss, c.probs, g))
}

// ---------------------------------------------------------------------------
// Checkpoints

/// One row of the training metric log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub iteration: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamInfo {
    pub name: String,
    pub dims: [usize; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub config: VitConfig,
    pub classes: Vec<String>,
    pub step: usize,
    pub history: Vec<MetricRow>,
    pub params: Vec<ParamInfo>,
    /// Whether `adam_m/` and `adam_v/` moment files are present.
    pub has_optimizer_state: bool,
    /// Free-form training settings needed to resume.
    #[serde(default)]
    pub train: serde_json::Value,
}

pub const CHECKPOINT_FORMAT: &str = "cardiomodal-vit-1";

pub fn write_param_set(dir: &Path, p: &VitParams) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, m) in p.names().iter().zip(p.tensors()) {
        write_stf(&mat_to_tensor(m), dir.join(format!("{name}.stf")))?;
    }
    Ok(())
}

pub fn read_param_set(dir: &Path, cfg: &VitConfig) -> Result<VitParams> {
    let mut p = VitParams::init(cfg, 0)?;
    let names = p.names();
    for (name, m) in names.iter().zip(p.tensors_mut()) {
        let t = read_stf(dir.join(format!("{name}.stf")))?;
        *m = tensor_to_mat(&t, m.nrows(), m.ncols())?;
    }
    Ok(p)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: VitParams,
    pub moments: Option<(VitParams, VitParams)>,
}

impl Checkpoint {
    pub fn new(config: VitConfig, classes: Vec<String>, params: VitParams) -> Self {
        let info = params
            .names()
            .into_iter()
            .zip(params.tensors())
            .map(|(name, m)| ParamInfo { name, dims: [m.nrows(), m.ncols()] })
            .collect();
        Self {
            header: CheckpointHeader {
                format: CHECKPOINT_FORMAT.into(),
                config,
                classes,
                step: 0,
                history: Vec::new(),
                params: info,
                has_optimizer_state: false,
                train: serde_json::Value::Null,
            },
            params,
            moments: None,
        }
    }

    /// Writes into a sibling temporary directory and renames it over `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "checkpoint".into());
        let tmp = dir.with_file_name(format!(".{name}.tmp"));
        if tmp.exists() {
            std::fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        }
        write_param_set(&tmp.join("params"), &self.params)?;
        let mut header = self.header.clone();
        header.has_optimizer_state = self.moments.is_some();
        if let Some((m, v)) = &self.moments {
            write_param_set(&tmp.join("adam_m"), m)?;
            write_param_set(&tmp.join("adam_v"), v)?;
        }
        write_json(&header, tmp.join("header.json"))?;
        if dir.exists() {
            std::fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::rename(&tmp, dir).map_err(|e| Error::io(dir, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let header: CheckpointHeader = read_json(dir.join("header.json"))?;
        if header.format != CHECKPOINT_FORMAT {
            return Err(Error::InvalidArgument(format!("unknown checkpoint format {:?}", header.format)));
        }
        header.config.validate()?;
        let params = read_param_set(&dir.join("params"), &header.config)?;
        let moments = if header.has_optimizer_state {
            Some((read_param_set(&dir.join("adam_m"), &header.config)?, read_param_set(&dir.join("adam_v"), &header.config)?))
        } else {
            None
        };
        Ok(Self { header, params, moments })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(cfg: &VitConfig, seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..cfg.image_size * cfg.image_size).map(|_| rng.random_range(0.0..1.0)).collect()
    }

    #[test]
    fn full_config_counts() {
        let cfg = VitConfig::full(4);
        assert_eq!(cfg.tokens(), 64);
        assert_eq!(cfg.raw_dim(), 5120);
        // SPT: 2*5120 + 5120*64 + 64 + 64*64 = 342_080
        // block: 4*64 + 4*(64*64 + 64) + 4 + (64*128 + 128) + (128*64 + 64) = 33_476
        // head: (4096*1024 + 1024) + (1024*512 + 512) + (512*4 + 4) = 4_722_180
        // The reference figure of 5 730 512 counts layers not fully described.
        assert_eq!(cfg.param_count(), 342_080 + 8 * 33_476 + 4_722_180);
    }

    #[test]
    fn param_count_matches_tensors() {
        for cfg in [VitConfig::tiny(3), VitConfig::toy(4)] {
            let p = VitParams::init(&cfg, 1).unwrap();
            assert_eq!(p.count(), cfg.param_count());
            assert_eq!(p.names().len(), p.tensors().len());
            let mut names = p.names();
            names.sort();
            names.dedup();
            assert_eq!(names.len(), p.tensors().len());
        }
    }

    #[test]
    fn config_validation() {
        let mut c = VitConfig::tiny(2);
        c.patch_size = 5;
        assert!(c.validate().is_err());
        let mut c = VitConfig::tiny(2);
        c.mlp_dims = vec![16, 4];
        assert!(c.validate().is_err());
        let mut c = VitConfig::tiny(2);
        c.num_heads = 3;
        assert!(c.validate().is_err());
    }

    #[test]
    fn spt_shapes_and_zero_image() {
        let cfg = VitConfig::tiny(2);
        let mut p = VitParams::init(&cfg, 4).unwrap();
        p.proj_b = Mat::from_fn(1, cfg.proj_dim, |_, j| j as f64 * 0.1);
        let e = spt_tokenize(&vec![0.0; 256], &cfg, &p).unwrap();
        assert_eq!((e.nrows(), e.ncols()), (4, 8));
        // Zero patches normalise to zero, so tokens are bias plus position.
        for t in 0..4 {
            for j in 0..8 {
                assert!((e[(t, j)] - (p.proj_b[(0, j)] + p.pos[(t, j)])).abs() < 1e-12);
            }
        }
        assert!(spt_tokenize(&[0.0; 100], &cfg, &p).is_err());
    }

    #[test]
    fn shifted_channels_differ_only_at_padding() {
        let cfg = VitConfig::tiny(2);
        let ch = spt_channels(&vec![2.0; 256], &cfg).unwrap();
        let s = 4isize;
        let shifts = [(-s, -s), (-s, s), (s, -s), (s, s)];
        for (c, (dy, dx)) in shifts.iter().enumerate() {
            for y in 0..16isize {
                for x in 0..16isize {
                    let inside = (0..16).contains(&(y + dy)) && (0..16).contains(&(x + dx));
                    let v = ch[c + 1][(y * 16 + x) as usize];
                    assert_eq!(v, if inside { 2.0 } else { 0.0 });
                }
            }
        }
        assert!(ch[0].iter().all(|&v| v == 2.0));
    }

    #[test]
    fn attention_rows_and_limits() {
        let cfg = VitConfig::tiny(2);
        let p = VitParams::init(&cfg, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tokens = Mat::from_fn(4, 8, |_, _| rng.random_range(-1.0..1.0));
        let out = lsa_attention(&tokens, &p.blocks[0], &cfg, None).unwrap();
        for w in &out.weights {
            for i in 0..4 {
                assert_eq!(w[(i, i)], 0.0);
                let s: f64 = (0..4).map(|j| w[(i, j)]).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
        let two = Mat::from_fn(2, 8, |_, _| rng.random_range(-1.0..1.0));
        let out = lsa_attention(&two, &p.blocks[0], &cfg, None).unwrap();
        assert!(out.weights.iter().all(|w| w[(0, 1)] == 1.0 && w[(1, 0)] == 1.0));
        let mut hot = p.blocks[0].clone();
        hot.tau.fill(1e9);
        let out = lsa_attention(&tokens, &hot, &cfg, None).unwrap();
        for w in &out.weights {
            for i in 0..4 {
                for j in (0..4).filter(|&j| j != i) {
                    assert!((w[(i, j)] - 1.0 / 3.0).abs() < 1e-4);
                }
            }
        }
        hot.tau[(0, 1)] = 0.0;
        assert!(matches!(lsa_attention(&tokens, &hot, &cfg, None), Err(Error::NonPositiveTemperature(_))));
    }

    #[test]
    fn forward_is_a_distribution_and_deterministic() {
        let cfg = VitConfig::tiny(3);
        let p = VitParams::init(&cfg, 5).unwrap();
        let img = image(&cfg, 1);
        let a = forward(&img, &p, &cfg, None).unwrap();
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(a.iter().all(|&v| v > 0.0 && v < 1.0));
        assert_eq!(a, forward(&img, &p, &cfg, None).unwrap());
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        assert_eq!(forward(&img, &p, &cfg, Some(&mut r1)).unwrap(), forward(&img, &p, &cfg, Some(&mut r2)).unwrap());
    }

    #[test]
    fn uniform_scores_give_log_classes() {
        let cfg = VitConfig::tiny(5);
        let mut p = VitParams::init(&cfg, 5).unwrap();
        p.cls_w.fill(0.0);
        let (loss, probs, _) = backward(&image(&cfg, 2), 3, &p, &cfg, None).unwrap();
        assert!((loss - 5f64.ln()).abs() < 1e-12);
        assert!(probs.iter().all(|&v| (v - 0.2).abs() < 1e-12));
    }

    #[test]
    fn non_finite_parameters_are_reported() {
        let cfg = VitConfig::tiny(2);
        let mut p = VitParams::init(&cfg, 5).unwrap();
        p.cls_b[(0, 0)] = f64::NAN;
        assert!(matches!(forward(&image(&cfg, 2), &p, &cfg, None), Err(Error::NonFinite(_))));
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = VitConfig::tiny(2);
        let p = VitParams::init(&cfg, 8).unwrap();
        let mut ck = Checkpoint::new(cfg.clone(), vec!["a".into(), "b".into()], p.clone());
        ck.header.step = 7;
        ck.moments = Some((p.zeros_like(), p.clone()));
        let path = dir.path().join("best");
        ck.save(&path).unwrap();
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.header.step, 7);
        assert!(back.header.has_optimizer_state);
        assert_eq!(back.params, p);
        assert_eq!(back.moments.unwrap().1, p);
        assert!(path.join("params/block0.attn.tau.stf").exists());
    }
}
