//! Defect taxonomy, instance records and the detection/segmentation combiner.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::boxes::{box_iou, BBox};
use crate::mask::BinaryMask;

pub const CLASS_COUNT: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefectClass {
    Pothole,
    Manhole,
    Longitudinal,
    Transverse,
    Joint,
    Wheel,
}

impl DefectClass {
    pub const ALL: [DefectClass; CLASS_COUNT] = [
        DefectClass::Pothole,
        DefectClass::Manhole,
        DefectClass::Longitudinal,
        DefectClass::Transverse,
        DefectClass::Joint,
        DefectClass::Wheel,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            DefectClass::Pothole => "pothole",
            DefectClass::Manhole => "manhole",
            DefectClass::Longitudinal => "longitudinal",
            DefectClass::Transverse => "transverse",
            DefectClass::Joint => "joint",
            DefectClass::Wheel => "wheel",
        }
    }
}

/// Class-labelled instance: ground-truth annotation or final prediction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub class: usize,
    pub mask: BinaryMask,
    pub bbox: BBox,
    pub confidence: f64,
}

/// Scored box from the detection head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub class_probs: Vec<f64>,
    pub score: f64,
}

impl Detection {
    /// Most probable class; the lowest index wins ties.
    pub fn class(&self) -> usize {
        argmax(&self.class_probs)
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in v.iter().enumerate() {
        if p > v[best] {
            best = i;
        }
    }
    best
}

/// Allocation order: descending score, then larger box, then input position.
pub fn allocation_order(detections: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        let (da, db) = (&detections[a], &detections[b]);
        db.score
            .partial_cmp(&da.score)
            .unwrap_or(Ordering::Equal)
            .then(
                db.bbox
                    .area()
                    .partial_cmp(&da.bbox.area())
                    .unwrap_or(Ordering::Equal),
            )
            .then(a.cmp(&b))
    });
    order
}

/// Per-class greedy non-maximum suppression; survivors come out in
/// [`allocation_order`].
pub fn nms(detections: Vec<Detection>, iou_threshold: f64) -> Vec<Detection> {
    let mut kept: Vec<Detection> = Vec::new();
    for i in allocation_order(&detections) {
        let d = &detections[i];
        if kept
            .iter()
            .all(|k| k.class() != d.class() || box_iou(&k.bbox, &d.bbox) <= iou_threshold)
        {
            kept.push(d.clone());
        }
    }
    kept
}

/// Split a full-image binary mask into class-labelled instances.
///
/// Detections scoring below `score_threshold` are dropped. The rest claim, in
/// [`allocation_order`], the mask pixels inside their box not already claimed.
/// Instances that end up with no pixels are dropped.
pub fn combine_instances(
    detections: &[Detection],
    mask: &BinaryMask,
    score_threshold: f64,
) -> Vec<InstanceRecord> {
    let (w, h) = (mask.width(), mask.height());
    let mut claimed = BinaryMask::empty(w, h);
    let mut out = Vec::new();
    for i in allocation_order(detections) {
        let det = &detections[i];
        if det.score < score_threshold {
            continue;
        }
        let mut own = BinaryMask::empty(w, h);
        let (xs, ys) = det.bbox.pixel_span(w, h);
        for y in ys {
            for x in xs.clone() {
                if mask.get(x, y) && !claimed.get(x, y) {
                    own.set(x, y, true);
                    claimed.set(x, y, true);
                }
            }
        }
        if !own.is_empty() {
            out.push(InstanceRecord {
                class: det.class(),
                mask: own,
                bbox: det.bbox,
                confidence: det.score,
            });
        }
    }
    out
}
