//! Detection, instance-segmentation and binary-segmentation metrics.

use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::boxes::box_iou;
use crate::error::{shape_err, Result};
use crate::instances::{InstanceRecord, CLASS_COUNT};
use crate::mask::BinaryMask;

/// Binarization thresholds `0.01, 0.02, …, 0.99`.
pub fn sweep_thresholds() -> impl Iterator<Item = f64> {
    (1..=99).map(|k| k as f64 / 100.0)
}

/// Intersection over union; 0 when the union is empty.
pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let inter = a.intersection_count(b)?;
    let union = a.count() + b.count() - inter;
    Ok(if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    })
}

/// All-point interpolated AP of a ranked list of match flags.
///
/// `None` when there is no ground truth.
pub fn average_precision(matches: &[bool], total_gt: usize) -> Option<f64> {
    if total_gt == 0 {
        return None;
    }
    let mut tp = 0usize;
    let mut points = Vec::with_capacity(matches.len());
    for (k, &m) in matches.iter().enumerate() {
        tp += m as usize;
        points.push((tp as f64 / total_gt as f64, tp as f64 / (k + 1) as f64));
    }
    let mut envelope = 0.0f64;
    let mut ap = 0.0;
    for k in (0..points.len()).rev() {
        envelope = envelope.max(points[k].1);
        let prev = if k == 0 { 0.0 } else { points[k - 1].0 };
        ap += (points[k].0 - prev) * envelope;
    }
    Some(ap)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IouMode {
    Box,
    Mask,
}

fn instance_iou(a: &InstanceRecord, b: &InstanceRecord, mode: IouMode) -> Result<f64> {
    match mode {
        IouMode::Box => Ok(box_iou(&a.bbox, &b.bbox)),
        IouMode::Mask => mask_iou(&a.mask, &b.mask),
    }
}

/// Predictions and annotations of one image.
#[derive(Clone, Debug, Default)]
pub struct ImageInstances {
    pub predictions: Vec<InstanceRecord>,
    pub annotations: Vec<InstanceRecord>,
}

fn by_confidence(preds: &[InstanceRecord]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| {
        preds[b]
            .confidence
            .partial_cmp(&preds[a].confidence)
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// Greedy one-to-one matching inside one image: in descending confidence, each
/// prediction takes the unmatched same-class annotation of highest IoU, if
/// that IoU reaches `iou_threshold`. Returns a flag per prediction.
pub fn match_image(image: &ImageInstances, iou_threshold: f64, mode: IouMode) -> Result<Vec<bool>> {
    let mut taken = vec![false; image.annotations.len()];
    let mut flags = vec![false; image.predictions.len()];
    for i in by_confidence(&image.predictions) {
        let p = &image.predictions[i];
        let mut best: Option<(usize, f64)> = None;
        for (j, gt) in image.annotations.iter().enumerate() {
            if taken[j] || gt.class != p.class {
                continue;
            }
            let iou = instance_iou(p, gt, mode)?;
            if iou >= iou_threshold && best.is_none_or(|(_, b)| iou > b) {
                best = Some((j, iou));
            }
        }
        if let Some((j, _)) = best {
            taken[j] = true;
            flags[i] = true;
        }
    }
    Ok(flags)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApSummary {
    /// AP per class; `None` for classes absent from the ground truth.
    pub per_class: Vec<Option<f64>>,
    /// Mean over present classes, 0 when none is present.
    pub mean: f64,
}

/// Per-class AP and mAP over a dataset.
pub fn mean_ap(images: &[ImageInstances], iou_threshold: f64, mode: IouMode) -> Result<ApSummary> {
    let mut ranked: Vec<Vec<(f64, usize, usize, bool)>> = vec![Vec::new(); CLASS_COUNT];
    let mut gt_count = vec![0usize; CLASS_COUNT];
    for (img, image) in images.iter().enumerate() {
        for a in &image.annotations {
            *gt_count
                .get_mut(a.class)
                .ok_or_else(|| shape_err!("class {} out of range", a.class))? += 1;
        }
        let flags = match_image(image, iou_threshold, mode)?;
        for (i, (p, m)) in image.predictions.iter().zip(flags).enumerate() {
            ranked
                .get_mut(p.class)
                .ok_or_else(|| shape_err!("class {} out of range", p.class))?
                .push((p.confidence, img, i, m));
        }
    }
    let mut per_class = Vec::with_capacity(CLASS_COUNT);
    for (list, &g) in ranked.iter_mut().zip(&gt_count) {
        list.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(Ordering::Equal)
                .then((a.1, a.2).cmp(&(b.1, b.2)))
        });
        let flags: Vec<bool> = list.iter().map(|e| e.3).collect();
        per_class.push(average_precision(&flags, g));
    }
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let mean = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    Ok(ApSummary { per_class, mean })
}

/// Precision, recall and F1 of predictions with confidence at least
/// `confidence_threshold`, matched as in [`match_image`].
pub fn detection_prf(
    images: &[ImageInstances],
    iou_threshold: f64,
    confidence_threshold: f64,
    mode: IouMode,
) -> Result<(f64, f64, f64)> {
    let (mut tp, mut det, mut gt) = (0usize, 0usize, 0usize);
    for image in images {
        let kept = ImageInstances {
            predictions: image
                .predictions
                .iter()
                .filter(|p| p.confidence >= confidence_threshold)
                .cloned()
                .collect(),
            annotations: image.annotations.clone(),
        };
        tp += match_image(&kept, iou_threshold, mode)?
            .iter()
            .filter(|&&m| m)
            .count();
        det += kept.predictions.len();
        gt += kept.annotations.len();
    }
    let p = if det == 0 {
        0.0
    } else {
        tp as f64 / det as f64
    };
    let r = if gt == 0 { 0.0 } else { tp as f64 / gt as f64 };
    let f = if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    };
    Ok((p, r, f))
}

/// Pixel counts `(tp, fp, fn)` of `probs > t` against `gt`, one per sweep threshold.
pub fn threshold_counts(probs: &[f64], gt: &BinaryMask) -> Result<Vec<(usize, usize, usize)>> {
    if probs.len() != gt.bits().len() {
        return Err(shape_err!(
            "{} probabilities for a {}-pixel mask",
            probs.len(),
            gt.bits().len()
        ));
    }
    let mut pos: Vec<f64> = Vec::new();
    let mut neg: Vec<f64> = Vec::new();
    for (&p, &g) in probs.iter().zip(gt.bits()) {
        if g {
            pos.push(p);
        } else {
            neg.push(p);
        }
    }
    let cmp = |a: &f64, b: &f64| a.partial_cmp(b).unwrap_or(Ordering::Equal);
    pos.sort_by(cmp);
    neg.sort_by(cmp);
    Ok(sweep_thresholds()
        .map(|t| {
            let tp = pos.len() - pos.partition_point(|&p| p <= t);
            let fp = neg.len() - neg.partition_point(|&p| p <= t);
            (tp, fp, pos.len() - tp)
        })
        .collect())
}

/// `2tp / (2tp + fp + fn)`; 1 when all three are zero.
pub fn f_measure(tp: usize, fp: usize, fneg: usize) -> f64 {
    let d = 2 * tp + fp + fneg;
    if d == 0 {
        1.0
    } else {
        2.0 * tp as f64 / d as f64
    }
}

fn iou_counts(tp: usize, fp: usize, fneg: usize) -> f64 {
    let u = tp + fp + fneg;
    if u == 0 {
        1.0
    } else {
        tp as f64 / u as f64
    }
}

fn check_maps(probs: &[Vec<f64>], gts: &[BinaryMask]) -> Result<Vec<Vec<(usize, usize, usize)>>> {
    if probs.len() != gts.len() {
        return Err(shape_err!(
            "{} probability maps for {} masks",
            probs.len(),
            gts.len()
        ));
    }
    probs
        .iter()
        .zip(gts)
        .map(|(p, g)| threshold_counts(p, g))
        .collect()
}

/// Mean over the sweep of the dataset-mean IoU between `probs > t` and the
/// ground truth. An image where both sides are empty counts as IoU 1.
pub fn aiu(probs: &[Vec<f64>], gts: &[BinaryMask]) -> Result<f64> {
    let counts = check_maps(probs, gts)?;
    if counts.is_empty() {
        return Ok(0.0);
    }
    let n = counts.len() as f64;
    let mut total = 0.0;
    for k in 0..99 {
        total += counts
            .iter()
            .map(|c| iou_counts(c[k].0, c[k].1, c[k].2))
            .sum::<f64>()
            / n;
    }
    Ok(total / 99.0)
}

/// `(ODS, OIS)`: best F-measure of dataset-aggregated counts at one shared
/// threshold, and the mean of per-image best F-measures.
pub fn ods_ois(probs: &[Vec<f64>], gts: &[BinaryMask]) -> Result<(f64, f64)> {
    let counts = check_maps(probs, gts)?;
    if counts.is_empty() {
        return Ok((0.0, 0.0));
    }
    let mut ods = 0.0f64;
    for k in 0..99 {
        let (tp, fp, fneg) = counts
            .iter()
            .fold((0, 0, 0), |a, c| (a.0 + c[k].0, a.1 + c[k].1, a.2 + c[k].2));
        ods = ods.max(f_measure(tp, fp, fneg));
    }
    let ois = counts
        .iter()
        .map(|c| {
            c.iter()
                .map(|&(tp, fp, fneg)| f_measure(tp, fp, fneg))
                .fold(0.0, f64::max)
        })
        .sum::<f64>()
        / counts.len() as f64;
    Ok((ods, ois))
}

/// Full evaluation report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ap_mask: Vec<Option<f64>>,
    pub ap_box: Vec<Option<f64>>,
    pub map_mask: f64,
    pub map_box: f64,
    pub aiu: f64,
    pub ods: f64,
    pub ois: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub iou_threshold: f64,
    pub confidence_threshold: f64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            confidence_threshold: 0.5,
        }
    }
}

impl MetricReport {
    pub fn compute(
        instances: &[ImageInstances],
        probs: &[Vec<f64>],
        gts: &[BinaryMask],
        settings: &EvalSettings,
    ) -> Result<Self> {
        let m = mean_ap(instances, settings.iou_threshold, IouMode::Mask)?;
        let b = mean_ap(instances, settings.iou_threshold, IouMode::Box)?;
        let (ods, ois) = ods_ois(probs, gts)?;
        let (precision, recall, f1) = detection_prf(
            instances,
            settings.iou_threshold,
            settings.confidence_threshold,
            IouMode::Box,
        )?;
        Ok(Self {
            ap_mask: m.per_class,
            ap_box: b.per_class,
            map_mask: m.mean,
            map_box: b.mean,
            aiu: aiu(probs, gts)?,
            ods,
            ois,
            precision,
            recall,
            f1,
        })
    }

    /// One `key=value` per line; absent classes print `-`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (key, v) in [
            ("aiu", self.aiu),
            ("ods", self.ods),
            ("ois", self.ois),
            ("map_mask", self.map_mask),
            ("map_box", self.map_box),
            ("precision", self.precision),
            ("recall", self.recall),
            ("f1", self.f1),
        ] {
            let _ = writeln!(s, "{key}={v:.6}");
        }
        for (prefix, aps) in [("ap_mask", &self.ap_mask), ("ap_box", &self.ap_box)] {
            for (c, ap) in aps.iter().enumerate() {
                let name = crate::instances::DefectClass::from_index(c).map_or("?", |d| d.name());
                match ap {
                    Some(v) => _ = writeln!(s, "{prefix}.{name}={v:.6}"),
                    None => _ = writeln!(s, "{prefix}.{name}=-"),
                }
            }
        }
        s
    }
}
