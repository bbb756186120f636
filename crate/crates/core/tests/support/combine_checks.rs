//! Exhaustive comparison of instance combination with the pixel oracle.

#![allow(dead_code)]

use scm_core::boxes::BBox;
use scm_core::instances::{combine_instances, Detection};
use scm_core::mask::BinaryMask;

use super::{generators::detection, oracles};

pub fn check_case(dets: &[Detection], mask: &BinaryMask, thr: f64) -> Result<(), String> {
    let got = combine_instances(dets, mask, thr);
    if got != oracles::combine(dets, mask, thr) {
        return Err(format!("combination differs for {dets:?}"));
    }
    for (i, a) in got.iter().enumerate() {
        if a.mask.intersection_count(mask).unwrap() != a.mask.count() {
            return Err("instance pixel outside the binary mask".into());
        }
        for b in &got[i + 1..] {
            if a.mask.intersection_count(&b.mask).unwrap() != 0 {
                return Err(format!("overlapping instances for {dets:?}"));
            }
        }
    }
    Ok(())
}

fn masks() -> Vec<BinaryMask> {
    vec![
        BinaryMask::from_fn(5, 5, |_, _| true),
        BinaryMask::from_fn(5, 5, |x, y| (x + y) % 2 == 0),
        BinaryMask::from_fn(5, 5, |x, y| x >= 1 && y <= 3 && x * y != 4),
        BinaryMask::empty(5, 5),
    ]
}

/// Every sequence of up to `max_len` detections drawn from a small pool of
/// boxes, classes and scores (including ties and sub-threshold scores), on
/// several masks. Returns the number of cases checked.
pub fn exhaustive(max_len: usize) -> Result<usize, String> {
    let boxes = [
        BBox::new(0.0, 0.0, 3.0, 3.0),
        BBox::new(1.0, 1.0, 4.0, 4.0),
        BBox::new(0.4, 2.6, 5.0, 5.0),
        BBox::new(2.0, 0.0, 2.5, 5.0),
    ];
    let mut pool = Vec::new();
    for b in boxes {
        for (class, score) in [(0, 0.9), (1, 0.6), (2, 0.6), (0, 0.2)] {
            pool.push(detection(b, class, score));
        }
    }
    let mut count = 0;
    let masks = masks();
    let mut idx = vec![0usize; max_len];
    for len in 0..=max_len {
        idx.iter_mut().for_each(|i| *i = 0);
        loop {
            let dets: Vec<Detection> = idx[..len].iter().map(|&i| pool[i].clone()).collect();
            for m in &masks {
                check_case(&dets, m, 0.5)?;
                count += 1;
            }
            // odometer increment over the first `len` digits
            let mut k = 0;
            while k < len {
                idx[k] += 1;
                if idx[k] < pool.len() {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
            if k == len {
                break;
            }
        }
    }
    Ok(count)
}
