//! AdamW training with a linear warm-up followed by cosine decay, periodic
//! validation, a CSV metric log, and best/last checkpoints.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{stream_rng, AugmentConfig, BatchConfig, BatchStream, SampleRecord};
use crate::error::{Error, Result};
use crate::preprocess::resize_image;
use crate::tensor::write_atomic;
use crate::vit::{backward, forward, Checkpoint, MetricRow, VitConfig, VitParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub target_lr: f64,
    pub warmup_fraction: f64,
    pub max_iters: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub min_class_fraction: f64,
    pub augment: Option<AugmentConfig>,
    pub seed: u64,
    /// Iterations between validation passes; defaults to one epoch.
    pub eval_every: Option<usize>,
    /// Stop this run after the given iteration without changing the schedule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_at: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            target_lr: 1e-3,
            warmup_fraction: 0.10,
            max_iters: 300,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-7,
            batch_size: 64,
            min_class_fraction: 0.15,
            augment: Some(AugmentConfig::default()),
            seed: 0,
            eval_every: None,
            stop_at: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return Err(Error::InvalidArgument("warmup_fraction must lie in (0, 1)".into()));
        }
        if !(self.target_lr > 0.0) || self.weight_decay < 0.0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("target_lr > 0, weight_decay >= 0 and batch_size > 0 required".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidArgument("betas must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn warmup_iters(&self) -> f64 {
        self.warmup_fraction * self.max_iters as f64
    }
}

/// Linear ramp from 0 to `target_lr` over the first `N_w` iterations, then
/// `0.5 * lr_t * (1 + cos(pi * (i - N_w) / (N_iter - N_w)))`.
pub fn lr_at(i: usize, cfg: &TrainConfig) -> f64 {
    let (i, nw, n) = (i as f64, cfg.warmup_iters(), cfg.max_iters as f64);
    if i < nw {
        return cfg.target_lr * i / nw;
    }
    0.5 * cfg.target_lr * (1.0 + (std::f64::consts::PI * (i - nw) / (n - nw)).cos())
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: VitParams,
    pub v: VitParams,
    pub step: usize,
}

impl AdamState {
    pub fn new(p: &VitParams) -> Self {
        Self { m: p.zeros_like(), v: p.zeros_like(), step: 0 }
    }
}

/// One AdamW update on flat slices; `t` is the 1-based step count.
#[allow(clippy::too_many_arguments)]
pub fn adamw_update(p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], t: usize, lr: f64, cfg: &TrainConfig) {
    let c1 = 1.0 - cfg.beta1.powi(t as i32);
    let c2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..p.len() {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        let mhat = m[i] / c1;
        let vhat = v[i] / c2;
        p[i] -= lr * cfg.weight_decay * p[i] + lr * mhat / (vhat.sqrt() + cfg.adam_eps);
    }
}

/// AdamW over every parameter tensor. Parameters and moments are rounded to
/// `f32` afterwards so a saved checkpoint resumes bit-exactly.
pub fn adamw_step(params: &mut VitParams, grads: &VitParams, state: &mut AdamState, lr: f64, cfg: &TrainConfig) {
    state.step += 1;
    let t = state.step;
    let ps = params.tensors_mut();
    let gs = grads.tensors();
    let ms = state.m.tensors_mut();
    let vs = state.v.tensors_mut();
    for (((p, g), m), v) in ps.into_iter().zip(gs).zip(ms).zip(vs) {
        for j in 0..p.ncols() {
            adamw_update(p.col_as_slice_mut(j), g.col_as_slice(j), m.col_as_slice_mut(j), v.col_as_slice_mut(j), t, lr, cfg);
        }
    }
    params.round_to_f32();
    state.m.round_to_f32();
    state.v.round_to_f32();
}

const GRAD_CHUNK: usize = 8;

/// Mean loss, mean gradient and correct count over a batch. Per-sample work
/// runs in parallel over fixed chunks and is summed in chunk order, so the
/// result does not depend on the thread count.
pub fn batch_gradients(
    params: &VitParams,
    cfg: &VitConfig,
    images: &[Vec<f32>],
    labels: &[usize],
    seed: u64,
    iteration: usize,
) -> Result<(f64, VitParams, usize)> {
    let idx: Vec<usize> = (0..images.len()).collect();
    let partial: Vec<Result<(f64, VitParams, usize)>> = idx
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut g = params.zeros_like();
            let (mut loss, mut correct) = (0.0, 0);
            for &i in chunk {
                let mut rng = stream_rng(seed, &[5, iteration as u64, i as u64]);
                let (l, probs, gi) = backward(&images[i], labels[i], params, cfg, Some(&mut rng))?;
                loss += l;
                correct += usize::from(argmax(&probs) == labels[i]);
                g.add_scaled(&gi, 1.0);
            }
            Ok((loss, g, correct))
        })
        .collect();
    let n = images.len() as f64;
    let mut total = params.zeros_like();
    let (mut loss, mut correct) = (0.0, 0);
    for r in partial {
        let (l, g, c) = r?;
        loss += l;
        correct += c;
        total.add_scaled(&g, 1.0);
    }
    let mut mean = params.zeros_like();
    mean.add_scaled(&total, 1.0 / n);
    Ok((loss / n, mean, correct))
}

pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Sample image resized to the model input.
pub fn model_input(s: &SampleRecord, cfg: &VitConfig) -> Vec<f32> {
    let d = s.image.dims();
    resize_image(s.image.data(), (d[0], d[1]), (cfg.image_size, cfg.image_size))
}

/// Eval-mode class scores for every sample.
pub fn predict_samples(params: &VitParams, cfg: &VitConfig, samples: &[SampleRecord]) -> Result<Vec<Vec<f64>>> {
    samples.par_iter().map(|s| forward(&model_input(s, cfg), params, cfg, None)).collect()
}

/// Mean cross-entropy and per-image accuracy in eval mode.
pub fn evaluate_samples(params: &VitParams, cfg: &VitConfig, samples: &[SampleRecord]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let probs = predict_samples(params, cfg, samples)?;
    let n = samples.len() as f64;
    let loss = probs.iter().zip(samples).map(|(p, s)| -p[s.label].max(f64::MIN_POSITIVE).ln()).sum::<f64>() / n;
    let acc = probs.iter().zip(samples).filter(|(p, s)| argmax(p) == s.label).count() as f64 / n;
    Ok((loss, acc))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub history: Vec<MetricRow>,
    pub best_step: usize,
    pub best_val_acc: f64,
    pub best_dir: PathBuf,
    pub last_dir: PathBuf,
    pub params: VitParams,
}

pub const METRICS_FILE: &str = "metrics.csv";

fn metrics_csv(history: &[MetricRow]) -> String {
    let mut s = String::from("iteration,lr,train_loss,val_loss,val_acc\n");
    for r in history {
        let _ = writeln!(s, "{},{},{},{},{}", r.iteration, r.lr, r.train_loss, r.val_loss, r.val_acc);
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ResumeInfo {
    config: TrainConfig,
    best_step: usize,
    best_val_acc: f64,
}

/// Trains from `init` (or resumes from `out_dir/last` when `resume` is set),
/// writing `metrics.csv`, `best/` and `last/` under `out_dir`.
pub fn train(
    model: &VitConfig,
    classes: &[String],
    init: VitParams,
    train_set: &[SampleRecord],
    val_set: &[SampleRecord],
    cfg: &TrainConfig,
    out_dir: &Path,
    resume: bool,
) -> Result<TrainReport> {
    cfg.validate()?;
    model.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let best_dir = out_dir.join("best");
    let last_dir = out_dir.join("last");
    let schedule = TrainConfig { stop_at: None, ..cfg.clone() };

    let (mut params, mut adam, mut history, mut best_step, mut best_val_acc, start) = if resume {
        let ck = Checkpoint::load(&last_dir)?;
        let info: ResumeInfo = serde_json::from_value(ck.header.train.clone())?;
        if info.config != schedule || ck.header.config != *model {
            return Err(Error::InvalidArgument("resume settings differ from the checkpoint".into()));
        }
        let (m, v) = ck.moments.ok_or_else(|| Error::InvalidArgument("checkpoint lacks optimizer state".into()))?;
        let step = ck.header.step;
        (ck.params, AdamState { m, v, step }, ck.header.history, info.best_step, info.best_val_acc, step)
    } else {
        let adam = AdamState::new(&init);
        (init, adam, Vec::new(), 0, f64::NEG_INFINITY, 0)
    };

    let save = |dir: &Path, params: &VitParams, adam: &AdamState, history: &[MetricRow], best_step: usize, best_val_acc: f64| -> Result<()> {
        let mut ck = Checkpoint::new(model.clone(), classes.to_vec(), params.clone());
        ck.header.step = adam.step;
        ck.header.history = history.to_vec();
        ck.header.train = serde_json::to_value(ResumeInfo { config: schedule.clone(), best_step, best_val_acc })?;
        ck.moments = Some((adam.m.clone(), adam.v.clone()));
        ck.save(dir)
    };

    if start == 0 && !resume {
        write_atomic(&out_dir.join(METRICS_FILE), metrics_csv(&history).as_bytes())?;
        save(&best_dir, &params, &adam, &history, 0, best_val_acc)?;
        save(&last_dir, &params, &adam, &history, 0, best_val_acc)?;
    }

    let end = cfg.stop_at.map_or(cfg.max_iters, |s| s.min(cfg.max_iters));
    if start < end {
        let batch_cfg = BatchConfig {
            batch_size: cfg.batch_size,
            min_class_fraction: cfg.min_class_fraction,
            augment: cfg.augment,
            target: (model.image_size, model.image_size),
        };
        let stream = BatchStream::new(train_set, model.num_classes, batch_cfg, cfg.seed)?;
        let eval_every = cfg.eval_every.unwrap_or_else(|| stream.batches_per_epoch()).max(1);
        let (mut loss_sum, mut loss_n) = (0.0, 0usize);
        for i in start..end {
            let batch = stream.batch(i);
            let lr = lr_at(i, cfg);
            let (loss, grads, _) = match batch_gradients(&params, model, &batch.images, &batch.labels, cfg.seed, i) {
                Ok(r) => r,
                Err(Error::NonFinite(_)) => return Err(Error::Diverged { iteration: i, loss: f64::NAN }),
                Err(e) => return Err(e),
            };
            if !loss.is_finite() || !grads.all_finite() {
                return Err(Error::Diverged { iteration: i, loss });
            }
            adamw_step(&mut params, &grads, &mut adam, lr, cfg);
            if !params.all_finite() {
                return Err(Error::Diverged { iteration: i, loss });
            }
            loss_sum += loss;
            loss_n += 1;
            let done = i + 1;
            if done % eval_every == 0 || done == cfg.max_iters {
                let (val_loss, val_acc) = evaluate_samples(&params, model, val_set)?;
                history.push(MetricRow { iteration: done, lr, train_loss: loss_sum / loss_n as f64, val_loss, val_acc });
                log::info!("iter {done} lr {lr:.3e} train_loss {:.4} val_loss {val_loss:.4} val_acc {val_acc:.3}", loss_sum / loss_n as f64);
                (loss_sum, loss_n) = (0.0, 0);
                if val_acc > best_val_acc || (best_val_acc.is_nan() && !val_acc.is_nan()) {
                    best_val_acc = val_acc;
                    best_step = done;
                    save(&best_dir, &params, &adam, &history, best_step, best_val_acc)?;
                }
                save(&last_dir, &params, &adam, &history, best_step, best_val_acc)?;
                write_atomic(&out_dir.join(METRICS_FILE), metrics_csv(&history).as_bytes())?;
            }
        }
    }
    Ok(TrainReport { history, best_step, best_val_acc, best_dir, last_dir, params })
}
