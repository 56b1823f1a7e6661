//! Per-image prediction, sequence-level fusion, metrics and phase timing.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::{DecomposedSequence, SourceKind};
use crate::error::{Error, Result};
use crate::registry::{decompose_sequence, homogenize, DecomposeConfig, PhaseTimings};
use crate::tensor::{SnapshotSequence, Tensor};
use crate::trainer::argmax;
use crate::preprocess::resize_image;
use crate::vit::{forward, VitConfig, VitParams};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionRule {
    #[default]
    Average,
    Maximum,
}

impl FusionRule {
    pub fn name(self) -> &'static str {
        match self {
            Self::Average => "average",
            Self::Maximum => "maximum",
        }
    }
}

impl fmt::Display for FusionRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FusionRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "average" | "avg" | "mean" => Ok(Self::Average),
            "maximum" | "max" => Ok(Self::Maximum),
            _ => Err(Error::InvalidArgument(format!("unknown fusion rule {s:?}"))),
        }
    }
}

pub const UNDETERMINED: &str = "UNDETERMINED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub sequence_id: String,
    /// Per-image class probabilities `P_i`.
    pub scores: Vec<Vec<f64>>,
    /// Fused class scores `C_y`.
    pub fused: Vec<f64>,
    /// `None` means undetermined.
    pub verdict: Option<usize>,
    pub rule: FusionRule,
    pub threshold: f64,
}

impl PredictionRecord {
    pub fn image_predictions(&self) -> impl Iterator<Item = usize> + '_ {
        self.scores.iter().map(|p| argmax(p))
    }
}

/// Average or element-wise maximum of the per-image scores; the verdict is
/// the first maximising class when its score reaches `threshold`.
pub fn fuse(scores: &[Vec<f64>], rule: FusionRule, threshold: f64) -> Result<PredictionRecord> {
    let first = scores.first().ok_or(Error::EmptyScores)?;
    let c = first.len();
    for p in scores {
        if p.len() != c || c == 0 {
            return Err(Error::InvalidArgument("score vectors differ in length".into()));
        }
        let sum: f64 = p.iter().sum();
        if !p.iter().all(|v| v.is_finite() && *v >= 0.0) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!("score vector does not sum to 1 (sum {sum})")));
        }
    }
    let fused: Vec<f64> = (0..c)
        .map(|y| match rule {
            FusionRule::Average => scores.iter().map(|p| p[y]).sum::<f64>() / scores.len() as f64,
            FusionRule::Maximum => scores.iter().map(|p| p[y]).fold(f64::NEG_INFINITY, f64::max),
        })
        .collect();
    let best = argmax(&fused);
    let verdict = (fused[best] >= threshold).then_some(best);
    Ok(PredictionRecord { sequence_id: String::new(), scores: scores.to_vec(), fused, verdict, rule, threshold })
}

/// `TP / (TP + (FP + FN) / 2)`, or 0 when nothing was counted.
pub fn f1_score(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = tp as f64 + 0.5 * (fp + fn_) as f64;
    if denom == 0.0 {
        0.0
    } else {
        tp as f64 / denom
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub support: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub f1: f64,
}

/// Per-image averages in milliseconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingAverages {
    pub images: usize,
    pub svd_ms: f64,
    pub hosvd_ms: f64,
    pub hodmd_ms: f64,
    pub pred_ms: f64,
}

impl TimingAverages {
    pub fn from_totals(images: usize, t: &PhaseTimings, pred_ms_total: f64) -> Self {
        let n = images.max(1) as f64;
        Self { images, svd_ms: t.svd_ms / n, hosvd_ms: t.hosvd_ms / n, hodmd_ms: t.hodmd_ms / n, pred_ms: pred_ms_total / n }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub num_classes: usize,
    pub sequences: usize,
    pub images: usize,
    /// Image-level confusion counts against each image's own argmax.
    pub per_class_image: Vec<ClassMetrics>,
    /// Sequence-level confusion counts against the fused verdicts.
    pub per_class_sequence: Vec<ClassMetrics>,
    pub per_image_accuracy_without_fusion: f64,
    pub per_image_accuracy_with_fusion: f64,
    pub per_sequence_accuracy: f64,
    pub undetermined: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<TimingAverages>,
}

fn class_metrics(pairs: impl IntoIterator<Item = (Option<usize>, usize)>, c: usize) -> Vec<ClassMetrics> {
    let mut out = vec![ClassMetrics::default(); c];
    for (pred, truth) in pairs {
        out[truth].support += 1;
        match pred {
            Some(p) if p == truth => out[truth].tp += 1,
            Some(p) => {
                out[p].fp += 1;
                out[truth].fn_ += 1;
            }
            None => out[truth].fn_ += 1,
        }
    }
    for m in &mut out {
        m.f1 = f1_score(m.tp, m.fp, m.fn_);
    }
    out
}

/// Three accuracy variants and per-class F1. Undetermined verdicts count as
/// incorrect everywhere.
pub fn evaluate(predictions: &[PredictionRecord], labels: &[usize]) -> Result<MetricsReport> {
    if predictions.len() != labels.len() {
        return Err(Error::InvalidArgument(format!("{} predictions for {} labels", predictions.len(), labels.len())));
    }
    let c = predictions.first().map_or(0, |p| p.fused.len());
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::InvalidArgument(format!("label {bad} outside {c} classes")));
    }
    let images: usize = predictions.iter().map(|p| p.scores.len()).sum();
    let mut wo = 0;
    let mut with = 0;
    let mut seq = 0;
    for (p, &y) in predictions.iter().zip(labels) {
        wo += p.image_predictions().filter(|&k| k == y).count();
        if p.verdict == Some(y) {
            with += p.scores.len();
            seq += 1;
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(MetricsReport {
        num_classes: c,
        sequences: predictions.len(),
        images,
        per_class_image: class_metrics(
            predictions.iter().zip(labels).flat_map(|(p, &y)| p.image_predictions().map(move |k| (Some(k), y))),
            c,
        ),
        per_class_sequence: class_metrics(predictions.iter().zip(labels).map(|(p, &y)| (p.verdict, y)), c),
        per_image_accuracy_without_fusion: ratio(wo, images),
        per_image_accuracy_with_fusion: ratio(with, images),
        per_sequence_accuracy: ratio(seq, predictions.len()),
        undetermined: predictions.iter().filter(|p| p.verdict.is_none()).count(),
        timings: None,
    })
}

impl MetricsReport {
    /// Long-format CSV: `metric,class,value`.
    pub fn to_csv(&self, classes: &[String]) -> String {
        let mut s = String::from("metric,class,value\n");
        let name = |i: usize| classes.get(i).cloned().unwrap_or_else(|| i.to_string());
        for (scope, rows) in [("image", &self.per_class_image), ("sequence", &self.per_class_sequence)] {
            for (i, m) in rows.iter().enumerate() {
                let n = name(i);
                let _ = writeln!(s, "{scope}_support,{n},{}", m.support);
                let _ = writeln!(s, "{scope}_tp,{n},{}", m.tp);
                let _ = writeln!(s, "{scope}_fp,{n},{}", m.fp);
                let _ = writeln!(s, "{scope}_fn,{n},{}", m.fn_);
                let _ = writeln!(s, "{scope}_f1,{n},{}", m.f1);
            }
        }
        let _ = writeln!(s, "per_image_accuracy_without_fusion,,{}", self.per_image_accuracy_without_fusion);
        let _ = writeln!(s, "per_image_accuracy_with_fusion,,{}", self.per_image_accuracy_with_fusion);
        let _ = writeln!(s, "per_sequence_accuracy,,{}", self.per_sequence_accuracy);
        let _ = writeln!(s, "undetermined,,{}", self.undetermined);
        s
    }
}

/// Eval-mode scores for a stack of images `[n, H, W]`, resized to the model input.
pub fn score_images(images: &Tensor, params: &VitParams, cfg: &VitConfig) -> Result<Vec<Vec<f64>>> {
    use rayon::prelude::*;
    let d = images.dims();
    if d.len() != 3 {
        return Err(Error::InvalidShape { dims: d.to_vec(), reason: "expected [n, H, W] images" });
    }
    images
        .data()
        .par_chunks(d[1] * d[2])
        .map(|img| forward(&resize_image(img, (d[1], d[2]), (cfg.image_size, cfg.image_size)), params, cfg, None))
        .collect()
}

/// Fused prediction over the `kind` images of already decomposed sequences.
pub fn predict_sequences(
    seqs: &[DecomposedSequence],
    kind: SourceKind,
    params: &VitParams,
    cfg: &VitConfig,
    rule: FusionRule,
    threshold: f64,
) -> Result<Vec<PredictionRecord>> {
    seqs.iter()
        .map(|s| {
            let images = s.kinds.get(&kind).ok_or_else(|| Error::MissingKind { kind: kind.to_string(), sequence_id: s.sequence_id.clone() })?;
            let mut r = fuse(&score_images(images, params, cfg)?, rule, threshold)?;
            r.sequence_id = s.sequence_id.clone();
            Ok(r)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingBreakdown {
    pub averages: TimingAverages,
    pub total_ms: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PipelineConfig {
    pub decompose: DecomposeConfig,
    pub kind: SourceKind,
    pub rule: FusionRule,
    pub threshold: f64,
}

/// Raw sequence to fused verdicts with per-image phase timings. A sequence
/// with invalid frames yields one record per valid run.
pub fn timed_pipeline(
    sequence: &SnapshotSequence,
    params: &VitParams,
    cfg: &VitConfig,
    pc: &PipelineConfig,
) -> Result<(Vec<PredictionRecord>, TimingBreakdown)> {
    let start = Instant::now();
    let mut totals = PhaseTimings::default();
    let mut pred_ms = 0.0;
    let mut images = 0;
    let mut records = Vec::new();
    for s in homogenize(sequence, &pc.decompose)? {
        let d = decompose_sequence(&s, &pc.decompose)?;
        totals.frames += d.timings.frames;
        totals.svd_ms += d.timings.svd_ms;
        totals.hosvd_ms += d.timings.hosvd_ms;
        totals.hodmd_ms += d.timings.hodmd_ms;
        let imgs = d.kinds.get(&pc.kind).ok_or_else(|| Error::MissingKind { kind: pc.kind.to_string(), sequence_id: s.sequence_id.clone() })?;
        images += imgs.dims()[0];
        let t = Instant::now();
        let scores = score_images(imgs, params, cfg)?;
        pred_ms += t.elapsed().as_secs_f64() * 1e3;
        let mut r = fuse(&scores, pc.rule, pc.threshold)?;
        r.sequence_id = s.sequence_id.clone();
        records.push(r);
    }
    let averages = TimingAverages::from_totals(images, &totals, pred_ms);
    Ok((records, TimingBreakdown { averages, total_ms: start.elapsed().as_secs_f64() * 1e3 }))
}

/// Per-class image counts keyed by class index, used by report consumers.
pub fn label_counts(labels: &[usize]) -> BTreeMap<usize, usize> {
    let mut m = BTreeMap::new();
    for &l in labels {
        *m.entry(l).or_insert(0) += 1;
    }
    m
}
