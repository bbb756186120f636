//! Random small inputs for oracle comparisons.

#![allow(dead_code)]

use rand::Rng;
use scm_core::boxes::BBox;
use scm_core::instances::{Detection, InstanceRecord, CLASS_COUNT};
use scm_core::mask::BinaryMask;
use scm_core::metrics::ImageInstances;

pub fn random_rect_mask<R: Rng>(rng: &mut R, w: usize, h: usize) -> (BinaryMask, BBox) {
    let x0 = rng.random_range(0..w);
    let y0 = rng.random_range(0..h);
    let x1 = rng.random_range(x0 + 1..=w);
    let y1 = rng.random_range(y0 + 1..=h);
    let mut m = BinaryMask::from_fn(w, h, |x, y| x >= x0 && x < x1 && y >= y0 && y < y1);
    // knock out a few pixels so masks are not always rectangles
    let knockouts = if (x1 - x0) * (y1 - y0) > 2 {
        rng.random_range(0..3)
    } else {
        0
    };
    for _ in 0..knockouts {
        m.set(rng.random_range(x0..x1), rng.random_range(y0..y1), false);
    }
    (m, BBox::new(x0 as f64, y0 as f64, x1 as f64, y1 as f64))
}

fn instance<R: Rng>(
    rng: &mut R,
    w: usize,
    h: usize,
    classes: usize,
    confidence: f64,
) -> InstanceRecord {
    let (mask, bbox) = random_rect_mask(rng, w, h);
    InstanceRecord {
        class: rng.random_range(0..classes),
        mask,
        bbox,
        confidence,
    }
}

/// One image with up to 3 annotations and up to 4 predictions. Predictions
/// are often jittered copies of annotations; confidences come from a coarse
/// grid so ties occur.
pub fn random_image<R: Rng>(rng: &mut R, w: usize, h: usize, classes: usize) -> ImageInstances {
    let annotations: Vec<InstanceRecord> = (0..rng.random_range(0..=3))
        .map(|_| instance(rng, w, h, classes, 1.0))
        .collect();
    let mut predictions = Vec::new();
    for _ in 0..rng.random_range(0..=4) {
        let confidence = rng.random_range(1..=10) as f64 / 10.0;
        if !annotations.is_empty() && rng.random_bool(0.6) {
            let mut p = annotations[rng.random_range(0..annotations.len())].clone();
            p.confidence = confidence;
            if rng.random_bool(0.2) {
                p.class = rng.random_range(0..classes);
            }
            if rng.random_bool(0.5) {
                let x = rng.random_range(0..w);
                let y = rng.random_range(0..h);
                let v = !p.mask.get(x, y);
                p.mask.set(x, y, v);
                p.bbox.x1 += rng.random_range(-1.0..1.0f64);
            }
            predictions.push(p);
        } else {
            predictions.push(instance(rng, w, h, classes, confidence));
        }
    }
    ImageInstances {
        predictions,
        annotations,
    }
}

/// Probability map on a coarse grid (ties with thresholds included) plus a random mask.
pub fn random_prob_map<R: Rng>(rng: &mut R, w: usize, h: usize) -> (Vec<f64>, BinaryMask) {
    let gt = if rng.random_bool(0.15) {
        BinaryMask::empty(w, h)
    } else {
        let bits = (0..w * h).map(|_| rng.random_bool(0.4)).collect();
        BinaryMask::from_bits(w, h, bits).expect("sized")
    };
    let probs = gt
        .bits()
        .iter()
        .map(|&g| {
            let base: f64 = if g {
                rng.random_range(0.2..1.0)
            } else {
                rng.random_range(0.0..0.8)
            };
            if rng.random_bool(0.2) {
                (base * 100.0).round() / 100.0
            } else {
                base
            }
        })
        .collect();
    (probs, gt)
}

pub fn detection(bbox: BBox, class: usize, score: f64) -> Detection {
    let mut class_probs = vec![0.1; CLASS_COUNT];
    class_probs[class] = 0.5;
    Detection {
        bbox,
        class_probs,
        score,
    }
}
