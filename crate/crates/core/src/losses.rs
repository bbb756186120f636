//! Anchor matching, the multi-task detection loss and the per-RoI
//! segmentation loss (binary cross-entropy plus Dice).

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{sigmoid, Graph, Var};
use crate::boxes::{box_iou, encode_box, Anchor, BBox};
use crate::error::{shape_err, Error, Result};
use crate::instances::InstanceRecord;
use crate::mask::BinaryMask;
use crate::scalar::Scalar;
use crate::tensor::{smooth_l1, smooth_l1_grad, Tensor};

/// Probability clipping used inside every log.
pub const PROB_EPS: f64 = 1e-7;
/// Smoothing term of the Dice ratio.
pub const DICE_EPS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Weight of the box-regression term.
    pub lambda: f64,
    /// Fixed `N_anch`; `None` uses the number of anchors in the sample.
    pub anchor_norm: Option<usize>,
    /// An anchor is positive when its best IoU exceeds this.
    pub iou_threshold: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            anchor_norm: None,
            iou_threshold: 0.5,
        }
    }
}

impl LossConfig {
    fn normalizer(&self, sampled: usize) -> Result<f64> {
        if self.lambda < 0.0 {
            return Err(Error::Config(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        match self.anchor_norm {
            Some(0) => Err(Error::Config("anchor_norm must be >= 1".into())),
            Some(n) => Ok(n as f64),
            None => Ok(sampled.max(1) as f64),
        }
    }
}

/// Detection-head output for one anchor.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorPrediction<T = f64> {
    pub objectness: T,
    pub class_probs: Vec<T>,
    pub deltas: [T; 4],
}

impl<T: Scalar> AnchorPrediction<T> {
    /// Largest class probability.
    pub fn p_star(&self) -> T {
        self.class_probs.iter().copied().fold(T::zero(), T::max)
    }
}

/// Training target for one anchor. Class, deltas and `gt_index` are only
/// meaningful when `positive`.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorTarget {
    pub positive: bool,
    pub class: usize,
    pub deltas: [f64; 4],
    pub gt_index: Option<usize>,
}

impl AnchorTarget {
    pub fn negative() -> Self {
        Self {
            positive: false,
            class: 0,
            deltas: [0.0; 4],
            gt_index: None,
        }
    }
}

/// Label every anchor against the ground truth: positive iff its best IoU
/// exceeds `iou_threshold`; positives take that box's class and deltas.
pub fn match_anchors(
    anchors: &[Anchor],
    gts: &[InstanceRecord],
    iou_threshold: f64,
) -> Result<Vec<AnchorTarget>> {
    anchors
        .iter()
        .map(|a| {
            let ab = a.bbox();
            let mut best: Option<(usize, f64)> = None;
            for (j, gt) in gts.iter().enumerate() {
                let iou = box_iou(&ab, &gt.bbox);
                if best.is_none_or(|(_, b)| iou > b) {
                    best = Some((j, iou));
                }
            }
            match best {
                Some((j, iou)) if iou > iou_threshold => Ok(AnchorTarget {
                    positive: true,
                    class: gts[j].class,
                    deltas: encode_box(a, &gts[j].bbox)?,
                    gt_index: Some(j),
                }),
                _ => Ok(AnchorTarget::negative()),
            }
        })
        .collect()
}

/// Pick at most `size` anchors, at most `size · positive_fraction` of them
/// positive, returned in ascending index order.
pub fn sample_anchors<R: Rng>(
    targets: &[AnchorTarget],
    size: usize,
    positive_fraction: f64,
    rng: &mut R,
) -> Vec<usize> {
    let (mut pos, mut neg): (Vec<usize>, Vec<usize>) =
        (0..targets.len()).partition(|&i| targets[i].positive);
    pos.shuffle(rng);
    neg.shuffle(rng);
    let max_pos = ((size as f64) * positive_fraction).floor() as usize;
    pos.truncate(max_pos);
    neg.truncate(size.saturating_sub(pos.len()));
    let mut out: Vec<usize> = pos.into_iter().chain(neg).collect();
    out.sort_unstable();
    out
}

fn clip_prob<T: Scalar>(p: T) -> (T, bool) {
    let (lo, hi) = (T::of(PROB_EPS), T::one() - T::of(PROB_EPS));
    if p < lo {
        (lo, true)
    } else if p > hi {
        (hi, true)
    } else {
        (p, false)
    }
}

/// Multi-task detection loss over aligned predictions and targets:
///
/// `(1/N)·Σ[L_obj(p, y) + y·L_cls(q, c)] + λ·(1/N)·Σ y·Σ_k smoothL1(t_k − t*_k)`
///
/// where `y` is the anchor's positivity label and `N` the anchor normalizer.
pub fn detection_loss<T: Scalar>(
    preds: &[AnchorPrediction<T>],
    targets: &[AnchorTarget],
    cfg: &LossConfig,
) -> Result<T> {
    if preds.len() != targets.len() {
        return Err(shape_err!(
            "{} predictions for {} targets",
            preds.len(),
            targets.len()
        ));
    }
    let n = T::of(cfg.normalizer(preds.len())?);
    let mut cls = T::zero();
    let mut reg = T::zero();
    for (p, t) in preds.iter().zip(targets) {
        let (po, _) = clip_prob(p.objectness);
        cls -= if t.positive {
            po.ln()
        } else {
            (T::one() - po).ln()
        };
        if t.positive {
            let q = *p
                .class_probs
                .get(t.class)
                .ok_or_else(|| shape_err!("class {} out of range", t.class))?;
            cls -= clip_prob(q).0.ln();
            for k in 0..4 {
                reg += smooth_l1(p.deltas[k] - T::of(t.deltas[k]))?;
            }
        }
    }
    let loss = cls / n + T::of(cfg.lambda) * reg / n;
    if !loss.is_finite() {
        return Err(Error::NumericDomain("detection loss is not finite".into()));
    }
    Ok(loss)
}

/// Decode a detection-head row `[objectness logit, K class logits, 4 deltas]`.
pub fn anchor_prediction_from_logits<T: Scalar>(row: &[T], classes: usize) -> AnchorPrediction<T> {
    let logits = &row[1..1 + classes];
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let denom: T = exps.iter().copied().sum();
    let d = &row[1 + classes..1 + classes + 4];
    AnchorPrediction {
        objectness: sigmoid(row[0]),
        class_probs: exps.iter().map(|&e| e / denom).collect(),
        deltas: [d[0], d[1], d[2], d[3]],
    }
}

/// [`detection_loss`] on the sampled rows of a raw head output
/// `[n_anchors, 1 + K + 4]`, recorded as one graph node.
pub fn detection_loss_op<T: Scalar>(
    g: &mut Graph<T>,
    head: Var,
    targets: &[AnchorTarget],
    sample: &[usize],
    cfg: &LossConfig,
) -> Result<Var> {
    let (rows, width) = g.value(head).dims2()?;
    if rows != targets.len() {
        return Err(shape_err!(
            "{rows} head rows for {} anchor targets",
            targets.len()
        ));
    }
    if width < 6 {
        return Err(shape_err!("head width {width} leaves no class logits"));
    }
    if let Some(&bad) = sample.iter().find(|&&i| i >= rows) {
        return Err(shape_err!("sampled anchor {bad} out of range"));
    }
    let classes = width - 5;
    let data = g.value(head).data();
    let preds: Vec<_> = sample
        .iter()
        .map(|&i| anchor_prediction_from_logits(&data[i * width..(i + 1) * width], classes))
        .collect();
    let tsel: Vec<AnchorTarget> = sample.iter().map(|&i| targets[i].clone()).collect();
    let value = detection_loss(&preds, &tsel, cfg)?;
    let n = T::of(cfg.normalizer(sample.len())?);
    let lambda = T::of(cfg.lambda);
    let sample: Arc<[usize]> = sample.into();
    let tsel: Arc<[AnchorTarget]> = tsel.into();
    g.custom(
        &[head],
        Tensor::scalar(value),
        Box::new(move |gout, inputs| {
            let up = gout.item();
            let x = inputs[0].data();
            let mut gx = vec![T::zero(); x.len()];
            for (&i, t) in sample.iter().zip(tsel.iter()) {
                let row = &x[i * width..(i + 1) * width];
                let p = anchor_prediction_from_logits(row, classes);
                let grow = &mut gx[i * width..(i + 1) * width];
                let y = if t.positive { T::one() } else { T::zero() };
                if !clip_prob(p.objectness).1 {
                    grow[0] += up * (p.objectness - y) / n;
                }
                if t.positive {
                    if !clip_prob(p.class_probs[t.class]).1 {
                        for (j, &q) in p.class_probs.iter().enumerate() {
                            let hot = if j == t.class { T::one() } else { T::zero() };
                            grow[1 + j] += up * (q - hot) / n;
                        }
                    }
                    for k in 0..4 {
                        grow[1 + classes + k] +=
                            up * lambda * smooth_l1_grad(p.deltas[k] - T::of(t.deltas[k])) / n;
                    }
                }
            }
            vec![Some(
                Tensor::new(inputs[0].shape().to_vec(), gx).expect("same shape"),
            )]
        }),
    )
}

fn check_pair<T>(pred: &[T], gt: &[bool]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(shape_err!(
            "prediction of {} pixels vs target of {}",
            pred.len(),
            gt.len()
        ));
    }
    if pred.is_empty() {
        return Err(shape_err!("empty mask"));
    }
    Ok(())
}

/// `1 − (2·Σ p·g + ε) / (Σ p + Σ g + ε)`.
pub fn dice_loss<T: Scalar>(pred: &[T], gt: &[bool]) -> Result<T> {
    check_pair(pred, gt)?;
    let eps = T::of(DICE_EPS);
    let (mut inter, mut total) = (T::zero(), T::zero());
    for (&p, &g) in pred.iter().zip(gt) {
        if g {
            inter += p;
            total += T::one();
        }
        total += p;
    }
    Ok(T::one() - (inter + inter + eps) / (total + eps))
}

/// Mean binary cross-entropy with predictions clipped to `[ε, 1 − ε]`.
pub fn bce_loss<T: Scalar>(pred: &[T], gt: &[bool]) -> Result<T> {
    check_pair(pred, gt)?;
    let mut s = T::zero();
    for (&p, &g) in pred.iter().zip(gt) {
        let (p, _) = clip_prob(p);
        s -= if g { p.ln() } else { (T::one() - p).ln() };
    }
    Ok(s / T::of(pred.len() as f64))
}

/// Sum over RoIs of `bce + dice`; zero for an empty set.
pub fn segmentation_loss<T: Scalar>(preds: &[Vec<T>], targets: &[Vec<bool>]) -> Result<T> {
    if preds.len() != targets.len() {
        return Err(shape_err!(
            "{} RoI predictions for {} targets",
            preds.len(),
            targets.len()
        ));
    }
    let mut total = T::zero();
    for (p, t) in preds.iter().zip(targets) {
        total += bce_loss(p, t)? + dice_loss(p, t)?;
    }
    Ok(total)
}

/// Graph node for `bce_loss(p) + dice_loss(p)` on a probability tensor.
pub fn bce_dice_op<T: Scalar>(g: &mut Graph<T>, probs: Var, target: &[bool]) -> Result<Var> {
    let p = g.value(probs).data();
    let value = bce_loss(p, target)? + dice_loss(p, target)?;
    let target: Arc<[bool]> = target.into();
    g.custom(
        &[probs],
        Tensor::scalar(value),
        Box::new(move |gout, inputs| {
            let up = gout.item();
            let p = inputs[0].data();
            let n = T::of(p.len() as f64);
            let eps = T::of(DICE_EPS);
            let (mut inter, mut total) = (T::zero(), T::zero());
            for (&pv, &gv) in p.iter().zip(target.iter()) {
                if gv {
                    inter += pv;
                    total += T::one();
                }
                total += pv;
            }
            let denom = total + eps;
            let numer = inter + inter + eps;
            let gx = p
                .iter()
                .zip(target.iter())
                .map(|(&pv, &gv)| {
                    let (pc, clipped) = clip_prob(pv);
                    let bce = if clipped {
                        T::zero()
                    } else if gv {
                        -T::one() / (pc * n)
                    } else {
                        T::one() / ((T::one() - pc) * n)
                    };
                    let two_g = if gv { T::of(2.0) } else { T::zero() };
                    let dice = -(two_g * denom - numer) / (denom * denom);
                    up * (bce + dice)
                })
                .collect();
            vec![Some(
                Tensor::new(inputs[0].shape().to_vec(), gx).expect("same shape"),
            )]
        }),
    )
}

/// Source pixel of every cell of a `res × res` nearest-neighbour resampling of `roi`.
pub fn roi_sample_points(
    roi: &BBox,
    width: usize,
    height: usize,
    res: usize,
) -> Result<Vec<(usize, usize)>> {
    if !roi.is_proper() || res == 0 {
        return Err(Error::Domain(format!("degenerate RoI {roi:?}")));
    }
    if roi.x0 < 0.0 || roi.y0 < 0.0 || roi.x1 > width as f64 || roi.y1 > height as f64 {
        return Err(Error::Domain(format!(
            "RoI {roi:?} leaves the {width}x{height} image"
        )));
    }
    let pick = |lo: f64, ext: f64, k: usize, n: usize| -> usize {
        let v = (lo + (k as f64 + 0.5) * ext / res as f64).floor();
        (v.max(0.0) as usize).min(n - 1)
    };
    let mut pts = Vec::with_capacity(res * res);
    for v in 0..res {
        let y = pick(roi.y0, roi.height(), v, height);
        for u in 0..res {
            pts.push((pick(roi.x0, roi.width(), u, width), y));
        }
    }
    Ok(pts)
}

/// Ground-truth mask cropped to `roi` and resampled to `res × res`.
pub fn make_mask_target(roi: &BBox, gt: &BinaryMask, res: usize) -> Result<Vec<bool>> {
    let pts = roi_sample_points(roi, gt.width(), gt.height(), res)?;
    Ok(pts.into_iter().map(|(x, y)| gt.get(x, y)).collect())
}

/// Crop `roi` out of every channel of `probs: [C, H, W]` at `res × res`.
pub fn roi_crop_op<T: Scalar>(g: &mut Graph<T>, probs: Var, roi: &BBox, res: usize) -> Result<Var> {
    let (c, h, w) = crate::layers::dims3(g, probs)?;
    let pts = roi_sample_points(roi, w, h, res)?;
    let mut idx = Vec::with_capacity(c * pts.len());
    for ch in 0..c {
        idx.extend(pts.iter().map(|&(x, y)| ((ch * h + y) * w + x) as u32));
    }
    g.gather(probs, idx.into(), &[c, res, res])
}

/// One RoI of the segmentation loss: region and its `C·res·res` target.
#[derive(Clone, Debug)]
pub struct RoiTarget {
    pub roi: BBox,
    pub target: Vec<bool>,
}

/// Graph form of [`segmentation_loss`] over RoIs cropped from `probs`.
pub fn segmentation_loss_op<T: Scalar>(
    g: &mut Graph<T>,
    probs: Var,
    rois: &[RoiTarget],
    res: usize,
) -> Result<Var> {
    let mut total: Option<Var> = None;
    for r in rois {
        let crop = roi_crop_op(g, probs, &r.roi, res)?;
        let l = bce_dice_op(g, crop, &r.target)?;
        total = Some(match total {
            None => l,
            Some(t) => g.add(t, l)?,
        });
    }
    match total {
        Some(t) => Ok(t),
        None => g.leaf(Tensor::scalar(T::zero())),
    }
}
