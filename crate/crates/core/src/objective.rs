//! Per-image training targets and the batch objective.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::boxes::box_iou;
use crate::data::DatasetRecord;
use crate::error::{config_err, Result};
use crate::losses::{
    detection_loss_op, make_mask_target, match_anchors, sample_anchors, segmentation_loss_op,
    AnchorTarget, LossConfig, RoiTarget,
};
use crate::network::{image_tensor, Model, Network};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Which losses drive training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    #[default]
    Joint,
    DetOnly,
    SegOnly,
}

impl Objective {
    pub fn uses_detection(self) -> bool {
        self != Objective::SegOnly
    }

    pub fn uses_segmentation(self) -> bool {
        self != Objective::DetOnly
    }
}

/// Target construction of the segmentation loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegMode {
    /// One class-agnostic foreground channel.
    #[default]
    Binary,
    /// One channel per defect class.
    MultiClass,
}

impl SegMode {
    pub fn channels(self, classes: usize) -> usize {
        match self {
            SegMode::Binary => 1,
            SegMode::MultiClass => classes,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    /// Anchors per image entering the detection loss.
    pub anchors_per_image: usize,
    pub positive_fraction: f64,
    /// Positive anchors reused as RoIs for the segmentation loss.
    pub rois_per_image: usize,
    /// Also mark each ground-truth box's best anchor positive, so thin or
    /// elongated defects that no anchor overlaps above the threshold still
    /// receive a positive.
    pub best_anchor_positive: bool,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            anchors_per_image: 64,
            positive_fraction: 0.5,
            rois_per_image: 8,
            best_anchor_positive: true,
        }
    }
}

/// Everything the losses need for one image.
#[derive(Clone, Debug)]
pub struct ImageTargets {
    pub anchors: Vec<AnchorTarget>,
    pub sample: Vec<usize>,
    pub rois: Vec<RoiTarget>,
}

/// Anchor labels with the optional best-anchor rule applied.
pub fn assign_anchors(
    net: &Network,
    record: &DatasetRecord,
    loss: &LossConfig,
    best_anchor_positive: bool,
) -> Result<Vec<AnchorTarget>> {
    let anchors = net.anchors();
    let mut targets = match_anchors(anchors, &record.annotations, loss.iou_threshold)?;
    if best_anchor_positive {
        for (j, gt) in record.annotations.iter().enumerate() {
            let mut best = (0, f64::NEG_INFINITY);
            for (i, a) in anchors.iter().enumerate() {
                let iou = box_iou(&a.bbox(), &gt.bbox);
                if iou > best.1 {
                    best = (i, iou);
                }
            }
            if best.1 > 0.0 && !targets[best.0].positive {
                let a = &anchors[best.0];
                targets[best.0] = AnchorTarget {
                    positive: true,
                    class: gt.class,
                    deltas: crate::boxes::encode_box(a, &gt.bbox)?,
                    gt_index: Some(j),
                };
            }
        }
    }
    Ok(targets)
}

/// Sample anchors and build RoI mask targets for one image.
pub fn build_targets<R: Rng>(
    net: &Network,
    record: &DatasetRecord,
    loss: &LossConfig,
    sampling: &SamplingConfig,
    seg_mode: SegMode,
    rng: &mut R,
) -> Result<ImageTargets> {
    let cfg = &net.cfg;
    if (record.width(), record.height()) != (cfg.input_size, cfg.input_size) {
        return Err(config_err!(
            "image {} is {}x{}, the network expects {}x{}",
            record.id,
            record.width(),
            record.height(),
            cfg.input_size,
            cfg.input_size
        ));
    }
    if let Some(a) = record.annotations.iter().find(|a| a.class >= cfg.classes) {
        return Err(config_err!(
            "annotation class {} exceeds the model's {} classes",
            a.class,
            cfg.classes
        ));
    }
    let anchors = assign_anchors(net, record, loss, sampling.best_anchor_positive)?;
    let sample = sample_anchors(
        &anchors,
        sampling.anchors_per_image,
        sampling.positive_fraction,
        rng,
    );
    let mut positives: Vec<usize> = sample
        .iter()
        .copied()
        .filter(|&i| anchors[i].positive)
        .collect();
    positives.shuffle(rng);
    positives.truncate(sampling.rois_per_image);
    positives.sort_unstable();
    let masks = match seg_mode {
        SegMode::Binary => vec![record.binary_mask()],
        SegMode::MultiClass => (0..cfg.classes)
            .map(|k| record.class_mask(|c| c == k))
            .collect(),
    };
    let s = cfg.input_size;
    let mut rois = Vec::with_capacity(positives.len());
    for i in positives {
        let roi = net.anchors()[i].bbox().clip(s, s);
        if roi.width() < 1.0 || roi.height() < 1.0 {
            continue;
        }
        let mut target =
            Vec::with_capacity(masks.len() * cfg.mask_resolution * cfg.mask_resolution);
        for m in &masks {
            target.extend(make_mask_target(&roi, m, cfg.mask_resolution)?);
        }
        rois.push(RoiTarget { roi, target });
    }
    Ok(ImageTargets {
        anchors,
        sample,
        rois,
    })
}

/// Loss values of one batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub detection: f64,
    pub segmentation: f64,
}

/// Record the mean loss of a batch on `g`; returns the loss node and its parts.
pub fn batch_loss_graph<T: Scalar>(
    g: &mut Graph<T>,
    net: &Network,
    bound: &crate::params::BoundParams,
    batch: &[(&Tensor<T>, &ImageTargets)],
    loss: &LossConfig,
    objective: Objective,
) -> Result<(Var, LossParts)> {
    let mut total: Option<Var> = None;
    let mut parts = LossParts::default();
    let scale = T::of(1.0 / batch.len().max(1) as f64);
    for (image, targets) in batch {
        let x = g.leaf((*image).clone())?;
        let out = net.forward(g, bound, x)?;
        let mut terms = Vec::new();
        if objective.uses_detection() {
            let d = detection_loss_op(g, out.det, &targets.anchors, &targets.sample, loss)?;
            parts.detection += g.value(d).item().as_f64() / batch.len() as f64;
            terms.push(d);
        }
        if objective.uses_segmentation() {
            let s = segmentation_loss_op(g, out.seg, &targets.rois, net.cfg.mask_resolution)?;
            parts.segmentation += g.value(s).item().as_f64() / batch.len() as f64;
            terms.push(s);
        }
        for t in terms {
            let t = g.scale(t, scale)?;
            total = Some(match total {
                None => t,
                Some(acc) => g.add(acc, t)?,
            });
        }
    }
    let total = match total {
        Some(t) => t,
        None => g.leaf(Tensor::scalar(T::zero()))?,
    };
    parts.total = g.value(total).item().as_f64();
    Ok((total, parts))
}

/// Mean batch loss and its gradient for every parameter, in store order.
pub fn batch_gradients<T: Scalar>(
    model: &Model<T>,
    batch: &[(&Tensor<T>, &ImageTargets)],
    loss: &LossConfig,
    objective: Objective,
) -> Result<(LossParts, Vec<Tensor<T>>)> {
    let mut g = Graph::new();
    let bound = model.params.bind(&mut g)?;
    let (total, parts) = batch_loss_graph(&mut g, &model.net, &bound, batch, loss, objective)?;
    let grads = g.backward(total)?;
    Ok((parts, model.params.collect_grads(&bound, &grads)))
}

/// Network input for a dataset record.
pub fn record_tensor<T: Scalar>(record: &DatasetRecord) -> Result<Tensor<T>> {
    image_tensor(record.image.as_raw(), record.width())
}

/// Squared L2 norm of a gradient list, summed over tensors whose name passes `keep`.
pub fn grad_norm_sq<T: Scalar>(
    store: &ParamStore<T>,
    grads: &[Tensor<T>],
    keep: impl Fn(&str) -> bool,
) -> f64 {
    store
        .names()
        .iter()
        .zip(grads)
        .filter(|(n, _)| keep(n))
        .map(|(_, g)| {
            g.data()
                .iter()
                .map(|v| v.as_f64() * v.as_f64())
                .sum::<f64>()
        })
        .sum()
}
