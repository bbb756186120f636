//! Brute-force reference implementations, written for clarity rather than
//! speed and without reusing library code paths.

#![allow(dead_code)]

use scm_core::boxes::BBox;
use scm_core::instances::{Detection, InstanceRecord, CLASS_COUNT};
use scm_core::mask::BinaryMask;
use scm_core::metrics::ImageInstances;

pub fn box_iou(a: &BBox, b: &BBox) -> f64 {
    let overlap = |lo0: f64, hi0: f64, lo1: f64, hi1: f64| (hi0.min(hi1) - lo0.max(lo1)).max(0.0);
    let inter = overlap(a.x0, a.x1, b.x0, b.x1) * overlap(a.y0, a.y1, b.y0, b.y1);
    let area = |r: &BBox| (r.x1 - r.x0).max(0.0) * (r.y1 - r.y0).max(0.0);
    let union = area(a) + area(b) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> f64 {
    let (mut inter, mut union) = (0, 0);
    for y in 0..a.height() {
        for x in 0..a.width() {
            inter += (a.get(x, y) && b.get(x, y)) as usize;
            union += (a.get(x, y) || b.get(x, y)) as usize;
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

fn iou(p: &InstanceRecord, g: &InstanceRecord, use_mask: bool) -> f64 {
    if use_mask {
        mask_iou(&p.mask, &g.mask)
    } else {
        box_iou(&p.bbox, &g.bbox)
    }
}

/// AP as the sum over true-positive ranks of `1/G` times the best precision
/// at that rank or any later one.
pub fn average_precision(flags: &[bool], total_gt: usize) -> Option<f64> {
    if total_gt == 0 {
        return None;
    }
    let precision: Vec<f64> = (0..flags.len())
        .map(|k| flags[..=k].iter().filter(|&&f| f).count() as f64 / (k + 1) as f64)
        .collect();
    let mut ap = 0.0;
    for k in 0..flags.len() {
        if flags[k] {
            let best = precision[k..].iter().cloned().fold(0.0, f64::max);
            ap += best / total_gt as f64;
        }
    }
    Some(ap)
}

/// Prediction indices by descending confidence, ties by index.
fn ranked(preds: &[InstanceRecord]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..preds.len()).collect();
    // insertion sort keeps this independent of the library's sort
    for i in 1..idx.len() {
        let mut j = i;
        while j > 0 && preds[idx[j]].confidence > preds[idx[j - 1]].confidence {
            idx.swap(j, j - 1);
            j -= 1;
        }
    }
    idx
}

pub fn match_image(image: &ImageInstances, thr: f64, use_mask: bool) -> Vec<bool> {
    let mut used = vec![false; image.annotations.len()];
    let mut flags = vec![false; image.predictions.len()];
    for i in ranked(&image.predictions) {
        let p = &image.predictions[i];
        let candidates: Vec<(usize, f64)> = image
            .annotations
            .iter()
            .enumerate()
            .filter(|(j, g)| !used[*j] && g.class == p.class)
            .map(|(j, g)| (j, iou(p, g, use_mask)))
            .filter(|&(_, v)| v >= thr)
            .collect();
        // highest IoU, first annotation on ties
        let mut pick: Option<(usize, f64)> = None;
        for c in candidates {
            if pick.is_none() || c.1 > pick.unwrap().1 {
                pick = Some(c);
            }
        }
        if let Some((j, _)) = pick {
            used[j] = true;
            flags[i] = true;
        }
    }
    flags
}

/// Per-class AP and mean over classes with ground truth.
pub fn mean_ap(images: &[ImageInstances], thr: f64, use_mask: bool) -> (Vec<Option<f64>>, f64) {
    let mut per_class = Vec::new();
    for class in 0..CLASS_COUNT {
        // (confidence, image, prediction, matched)
        let mut list: Vec<(f64, usize, usize, bool)> = Vec::new();
        let mut gt = 0;
        for (n, image) in images.iter().enumerate() {
            gt += image
                .annotations
                .iter()
                .filter(|a| a.class == class)
                .count();
            let flags = match_image(image, thr, use_mask);
            for (i, p) in image.predictions.iter().enumerate() {
                if p.class == class {
                    list.push((p.confidence, n, i, flags[i]));
                }
            }
        }
        for i in 1..list.len() {
            let mut j = i;
            while j > 0 && list[j].0 > list[j - 1].0 {
                list.swap(j, j - 1);
                j -= 1;
            }
        }
        let flags: Vec<bool> = list.iter().map(|e| e.3).collect();
        per_class.push(average_precision(&flags, gt));
    }
    let present: Vec<f64> = per_class.iter().filter_map(|v| *v).collect();
    let mean = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    (per_class, mean)
}

pub fn prf(
    images: &[ImageInstances],
    thr: f64,
    confidence: f64,
    use_mask: bool,
) -> (f64, f64, f64) {
    let (mut tp, mut det, mut gt) = (0, 0, 0);
    for image in images {
        let kept = ImageInstances {
            predictions: image
                .predictions
                .iter()
                .filter(|p| p.confidence >= confidence)
                .cloned()
                .collect(),
            annotations: image.annotations.clone(),
        };
        tp += match_image(&kept, thr, use_mask)
            .into_iter()
            .filter(|&f| f)
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
    (p, r, f)
}

fn pixel_counts(probs: &[f64], gt: &BinaryMask, t: f64) -> (usize, usize, usize) {
    let (mut tp, mut fp, mut fneg) = (0, 0, 0);
    for (i, &g) in gt.bits().iter().enumerate() {
        match (probs[i] > t, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            _ => {}
        }
    }
    (tp, fp, fneg)
}

fn thresholds() -> Vec<f64> {
    (1..100).map(|k| k as f64 / 100.0).collect()
}

pub fn aiu(probs: &[Vec<f64>], gts: &[BinaryMask]) -> f64 {
    if gts.is_empty() {
        return 0.0;
    }
    let ts = thresholds();
    let mut sum = 0.0;
    for &t in &ts {
        let mut mean = 0.0;
        for (p, g) in probs.iter().zip(gts) {
            let (tp, fp, fneg) = pixel_counts(p, g, t);
            mean += if tp + fp + fneg == 0 {
                1.0
            } else {
                tp as f64 / (tp + fp + fneg) as f64
            };
        }
        sum += mean / gts.len() as f64;
    }
    sum / ts.len() as f64
}

pub fn f_measure(tp: usize, fp: usize, fneg: usize) -> f64 {
    let precision = if tp + fp == 0 {
        None
    } else {
        Some(tp as f64 / (tp + fp) as f64)
    };
    let recall = if tp + fneg == 0 {
        None
    } else {
        Some(tp as f64 / (tp + fneg) as f64)
    };
    match (precision, recall) {
        (None, None) => 1.0,
        (Some(p), Some(r)) if p + r > 0.0 => 2.0 * p * r / (p + r),
        _ => 0.0,
    }
}

pub fn ods_ois(probs: &[Vec<f64>], gts: &[BinaryMask]) -> (f64, f64) {
    if gts.is_empty() {
        return (0.0, 0.0);
    }
    let ts = thresholds();
    let ods = ts
        .iter()
        .map(|&t| {
            let mut c = (0, 0, 0);
            for (p, g) in probs.iter().zip(gts) {
                let (a, b, d) = pixel_counts(p, g, t);
                c = (c.0 + a, c.1 + b, c.2 + d);
            }
            f_measure(c.0, c.1, c.2)
        })
        .fold(0.0, f64::max);
    let ois = probs
        .iter()
        .zip(gts)
        .map(|(p, g)| {
            ts.iter()
                .map(|&t| {
                    let (a, b, d) = pixel_counts(p, g, t);
                    f_measure(a, b, d)
                })
                .fold(0.0, f64::max)
        })
        .sum::<f64>()
        / gts.len() as f64;
    (ods, ois)
}

/// Pixel-by-pixel allocation: each foreground pixel goes to the highest
/// priority eligible detection whose box contains the pixel center.
pub fn combine(dets: &[Detection], mask: &BinaryMask, score_threshold: f64) -> Vec<InstanceRecord> {
    let area = |d: &Detection| (d.bbox.x1 - d.bbox.x0).max(0.0) * (d.bbox.y1 - d.bbox.y0).max(0.0);
    // a outranks b
    let outranks = |a: usize, b: usize| {
        let (da, db) = (&dets[a], &dets[b]);
        if da.score != db.score {
            return da.score > db.score;
        }
        if area(da) != area(db) {
            return area(da) > area(db);
        }
        a < b
    };
    let class_of = |d: &Detection| {
        let mut best = 0;
        for k in 1..d.class_probs.len() {
            if d.class_probs[k] > d.class_probs[best] {
                best = k;
            }
        }
        best
    };
    let (w, h) = (mask.width(), mask.height());
    let mut owned: Vec<BinaryMask> = dets.iter().map(|_| BinaryMask::empty(w, h)).collect();
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut owner: Option<usize> = None;
            for (i, d) in dets.iter().enumerate() {
                let inside = d.bbox.x0 <= cx && cx < d.bbox.x1 && d.bbox.y0 <= cy && cy < d.bbox.y1;
                if d.score >= score_threshold && inside && owner.is_none_or(|o| outranks(i, o)) {
                    owner = Some(i);
                }
            }
            if let Some(o) = owner {
                owned[o].set(x, y, true);
            }
        }
    }
    let mut order: Vec<usize> = (0..dets.len())
        .filter(|&i| dets[i].score >= score_threshold)
        .collect();
    for i in 1..order.len() {
        let mut j = i;
        while j > 0 && outranks(order[j], order[j - 1]) {
            order.swap(j, j - 1);
            j -= 1;
        }
    }
    order
        .into_iter()
        .filter(|&i| owned[i].count() > 0)
        .map(|i| InstanceRecord {
            class: class_of(&dets[i]),
            mask: owned[i].clone(),
            bbox: dets[i].bbox,
            confidence: dets[i].score,
        })
        .collect()
}

/// Linear CKA through the HSIC ratio with explicit centering matrices.
pub fn cka_hsic(x: &[Vec<f64>], y: &[Vec<f64>]) -> f64 {
    let n = x.len();
    let gram = |a: &[Vec<f64>]| -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| a[i].iter().zip(&a[j]).map(|(p, q)| p * q).sum())
                    .collect()
            })
            .collect()
    };
    let center = |k: Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        let hm = |i: usize, j: usize| if i == j { 1.0 } else { 0.0 } - 1.0 / n as f64;
        let mut hk = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                hk[i][j] = (0..n).map(|l| hm(i, l) * k[l][j]).sum();
            }
        }
        let mut out = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                out[i][j] = (0..n).map(|l| hk[i][l] * hm(l, j)).sum();
            }
        }
        out
    };
    let (k, l) = (center(gram(x)), center(gram(y)));
    let tr = |a: &Vec<Vec<f64>>, b: &Vec<Vec<f64>>| {
        (0..n)
            .map(|i| (0..n).map(|j| a[i][j] * b[j][i]).sum::<f64>())
            .sum::<f64>()
    };
    tr(&k, &l) / (tr(&k, &k) * tr(&l, &l)).sqrt()
}
