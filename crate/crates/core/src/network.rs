//! The mini encoder/decoder network with attention blocks between stages,
//! an anchor-based detection head on the bottleneck and a full-resolution
//! segmentation head.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{AttentionConfig, GramMode, ScmBlock};
use crate::autograd::{Graph, Var};
use crate::boxes::{decode_box, generate_anchors, Anchor};
use crate::error::{config_err, shape_err, Result};
use crate::instances::{nms, Detection, CLASS_COUNT};
use crate::layers::{concat_channels, conv2d, deconv2x2};
use crate::params::{BoundParams, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Which attention blocks the network carries.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// No attention blocks.
    Naive,
    /// Multi-head spatial attention without patch channel attention.
    Sm,
    /// Full blocks.
    #[default]
    Scm,
}

/// Attention settings shared by every block; the patch size is clamped to
/// the feature-map size of each site.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlockTemplate {
    pub patch_size: usize,
    pub heads: usize,
    pub layers: usize,
    pub model_dim: usize,
    pub mlp_hidden: usize,
    pub gram: GramMode,
    pub positional_encoding: bool,
}

impl Default for BlockTemplate {
    fn default() -> Self {
        Self {
            patch_size: 8,
            heads: 4,
            layers: 2,
            model_dim: 32,
            mlp_hidden: 64,
            gram: GramMode::Channel,
            positional_encoding: true,
        }
    }
}

/// Defaults describe the desk-scale network trained on 64×64 scenes;
/// [`NetworkConfig::reference`] is the 224×224 four-stage topology.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// Square input side in pixels.
    pub input_size: usize,
    pub stem_width: usize,
    /// Encoder widths, one per stride-2 downsampling stage; the decoder mirrors them.
    pub stage_widths: Vec<usize>,
    pub variant: Variant,
    pub attention: BlockTemplate,
    pub classes: usize,
    /// Output channels of the segmentation head: 1 for binary masks, `classes` for per-class masks.
    pub seg_channels: usize,
    pub anchor_scales: Vec<f64>,
    /// Height / width.
    pub anchor_ratios: Vec<f64>,
    /// Side of the RoI crops the segmentation loss compares.
    pub mask_resolution: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            input_size: 64,
            stem_width: 8,
            stage_widths: vec![16, 32, 64],
            variant: Variant::Scm,
            attention: BlockTemplate::default(),
            classes: CLASS_COUNT,
            seg_channels: 1,
            anchor_scales: vec![12.0, 28.0],
            anchor_ratios: vec![0.2, 1.0, 5.0],
            mask_resolution: 14,
        }
    }
}

impl NetworkConfig {
    /// Full-size topology: 224×224 input, four downsampling stages.
    pub fn reference() -> Self {
        Self {
            input_size: 224,
            stage_widths: vec![16, 32, 64, 128],
            attention: BlockTemplate {
                patch_size: 14,
                model_dim: 64,
                mlp_hidden: 128,
                ..BlockTemplate::default()
            },
            anchor_scales: vec![32.0, 64.0, 128.0],
            ..Self::default()
        }
    }

    pub fn stride(&self) -> usize {
        1 << self.stage_widths.len()
    }

    pub fn anchors_per_cell(&self) -> usize {
        self.anchor_scales.len() * self.anchor_ratios.len()
    }

    /// Width of one detection-head row: objectness, class logits, 4 deltas.
    pub fn head_width(&self) -> usize {
        5 + self.classes
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage_widths.is_empty() {
            return Err(config_err!("stage_widths must list at least one stage"));
        }
        if self.stem_width == 0 || self.stage_widths.contains(&0) {
            return Err(config_err!("stage widths must be positive"));
        }
        if self.input_size == 0 || !self.input_size.is_multiple_of(self.stride()) {
            return Err(config_err!(
                "input_size {} is not divisible by the stride {}",
                self.input_size,
                self.stride()
            ));
        }
        if self.classes < 1 {
            return Err(config_err!("classes must be >= 1"));
        }
        if self.seg_channels != 1 && self.seg_channels != self.classes {
            return Err(config_err!(
                "seg_channels must be 1 or classes ({}), got {}",
                self.classes,
                self.seg_channels
            ));
        }
        if self.anchor_scales.is_empty() || self.anchor_ratios.is_empty() {
            return Err(config_err!(
                "anchor_scales and anchor_ratios must be non-empty"
            ));
        }
        if self.mask_resolution == 0 {
            return Err(config_err!("mask_resolution must be >= 1"));
        }
        Ok(())
    }

    /// Widths of the stem followed by every encoder stage.
    fn level_widths(&self) -> Vec<usize> {
        std::iter::once(self.stem_width)
            .chain(self.stage_widths.iter().copied())
            .collect()
    }

    fn block_config(&self, res: usize) -> Result<AttentionConfig> {
        let a = &self.attention;
        let patch = a.patch_size.min(res);
        if patch == 0 || !res.is_multiple_of(patch) {
            return Err(config_err!(
                "patch size {} does not tile a {res}x{res} feature map",
                a.patch_size
            ));
        }
        Ok(AttentionConfig {
            patch_size: patch,
            heads: a.heads,
            layers: a.layers,
            model_dim: a.model_dim,
            mlp_hidden: a.mlp_hidden,
            channel_attention: self.variant == Variant::Scm,
            gram: a.gram,
            positional_encoding: a.positional_encoding,
        })
    }
}

/// Everything a forward pass produces.
pub struct ForwardOutput {
    /// `[anchors, 5 + K]` raw detection-head rows.
    pub det: Var,
    /// `[seg_channels, H, W]` mask probabilities.
    pub seg: Var,
    /// Named feature maps in topological order.
    pub activations: Vec<(String, Var)>,
}

/// Network topology: everything except the weights.
#[derive(Clone, Debug)]
pub struct Network {
    pub cfg: NetworkConfig,
    /// Attention block after each stage, keyed by the stage name.
    blocks: Vec<(String, ScmBlock)>,
    anchors: Vec<Anchor>,
    head_index: Arc<[u32]>,
}

/// Topology plus weights.
#[derive(Clone, Debug)]
pub struct Model<T> {
    pub net: Network,
    pub params: ParamStore<T>,
}

fn conv_name(stage: &str) -> (String, String) {
    (format!("{stage}.conv.w"), format!("{stage}.conv.b"))
}

impl Network {
    pub fn new(cfg: NetworkConfig) -> Result<Self> {
        cfg.validate()?;
        let widths = cfg.level_widths();
        let levels = widths.len();
        let mut blocks = Vec::new();
        if cfg.variant != Variant::Naive {
            for (l, &c) in widths.iter().enumerate() {
                let res = cfg.input_size >> l;
                let name = Self::encoder_stage(l);
                blocks.push((
                    name.clone(),
                    ScmBlock::new(cfg.block_config(res)?, c, res, res, format!("scm.{name}"))?,
                ));
            }
            // decoder stages except the last, which feeds the segmentation head
            for d in 1..levels - 1 {
                let l = levels - 1 - d;
                let res = cfg.input_size >> l;
                let name = format!("dec{d}");
                blocks.push((
                    name.clone(),
                    ScmBlock::new(
                        cfg.block_config(res)?,
                        widths[l],
                        res,
                        res,
                        format!("scm.{name}"),
                    )?,
                ));
            }
        }
        let grid = cfg.input_size / cfg.stride();
        let anchors = generate_anchors(
            cfg.stride(),
            &cfg.anchor_scales,
            &cfg.anchor_ratios,
            cfg.input_size,
            cfg.input_size,
        )?;
        let a = cfg.anchors_per_cell();
        let hw = cfg.head_width();
        let cells = grid * grid;
        let mut idx = Vec::with_capacity(cells * a * hw);
        for cell in 0..cells {
            for k in 0..a {
                for j in 0..hw {
                    idx.push(((k * hw + j) * cells + cell) as u32);
                }
            }
        }
        Ok(Self {
            cfg,
            blocks,
            anchors,
            head_index: idx.into(),
        })
    }

    fn encoder_stage(level: usize) -> String {
        if level == 0 {
            "stem".into()
        } else {
            format!("enc{level}")
        }
    }

    pub fn anchors(&self) -> &[Anchor] {
        &self.anchors
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    fn block(&self, stage: &str) -> Option<&ScmBlock> {
        self.blocks.iter().find(|(n, _)| n == stage).map(|(_, b)| b)
    }

    /// Fresh weights drawn from `seed`.
    pub fn init_params<T: Scalar>(&self, seed: u64) -> Result<ParamStore<T>> {
        let cfg = &self.cfg;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let he = |fan_in: usize| (2.0 / fan_in as f64).sqrt();
        let widths = cfg.level_widths();
        let levels = widths.len();
        let conv = |store: &mut ParamStore<T>,
                    rng: &mut ChaCha8Rng,
                    stage: &str,
                    cin: usize,
                    cout: usize,
                    k: usize| {
            let (w, b) = conv_name(stage);
            store.insert_normal(&w, &[cout, cin * k * k], he(cin * k * k), rng)?;
            store.insert_filled(&b, &[cout], 0.0)
        };
        conv(&mut store, &mut rng, "stem", 1, widths[0], 3)?;
        for l in 1..levels {
            conv(
                &mut store,
                &mut rng,
                &format!("enc{l}"),
                widths[l - 1],
                widths[l],
                3,
            )?;
        }
        for d in 1..levels {
            let l = levels - 1 - d;
            let name = format!("dec{d}");
            store.insert_normal(
                &format!("{name}.up.w"),
                &[widths[l] * 4, widths[l + 1]],
                he(widths[l + 1]),
                &mut rng,
            )?;
            store.insert_filled(&format!("{name}.up.b"), &[widths[l]], 0.0)?;
            conv(&mut store, &mut rng, &name, 2 * widths[l], widths[l], 3)?;
        }
        for (_, block) in &self.blocks {
            block.init_params(&mut store, &mut rng)?;
        }
        let cb = widths[levels - 1];
        conv(&mut store, &mut rng, "det.hidden", cb, cb, 3)?;
        let rows = cfg.anchors_per_cell() * cfg.head_width();
        store.insert_normal("det.out.w", &[rows, cb], 0.01, &mut rng)?;
        store.insert_filled("det.out.b", &[rows], 0.0)?;
        store.insert_normal("seg.out.w", &[cfg.seg_channels, widths[0]], 0.1, &mut rng)?;
        store.insert_filled("seg.out.b", &[cfg.seg_channels], -2.0)?;
        Ok(store)
    }

    fn conv_relu<T: Scalar>(
        g: &mut Graph<T>,
        p: &BoundParams,
        stage: &str,
        x: Var,
        stride: usize,
    ) -> Result<Var> {
        let (w, b) = conv_name(stage);
        let y = conv2d(g, x, p.var(&w)?, p.var(&b)?, 3, stride, 1)?;
        g.relu(y)
    }

    fn attend<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &BoundParams,
        stage: &str,
        x: Var,
        acts: &mut Vec<(String, Var)>,
    ) -> Result<Var> {
        match self.block(stage) {
            Some(block) => {
                let y = block.forward(g, p, x)?;
                acts.push((format!("scm.{stage}"), y));
                Ok(y)
            }
            None => Ok(x),
        }
    }

    /// Forward pass of one `[1, S, S]` image.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &BoundParams,
        image: Var,
    ) -> Result<ForwardOutput> {
        let cfg = &self.cfg;
        let s = cfg.input_size;
        if g.shape(image) != [1, s, s] {
            return Err(shape_err!(
                "expected a [1, {s}, {s}] image, got {:?}",
                g.shape(image)
            ));
        }
        let levels = cfg.stage_widths.len() + 1;
        let mut acts = Vec::new();
        let mut skips = Vec::with_capacity(levels);
        let mut x = image;
        for l in 0..levels {
            let stage = Self::encoder_stage(l);
            x = Self::conv_relu(g, p, &stage, x, if l == 0 { 1 } else { 2 })?;
            acts.push((stage.clone(), x));
            x = self.attend(g, p, &stage, x, &mut acts)?;
            skips.push(x);
        }
        let bottleneck = x;
        for d in 1..levels {
            let name = format!("dec{d}");
            let up = deconv2x2(
                g,
                x,
                p.var(&format!("{name}.up.w"))?,
                p.var(&format!("{name}.up.b"))?,
            )?;
            let up = g.relu(up)?;
            let cat = concat_channels(g, up, skips[levels - 1 - d])?;
            x = Self::conv_relu(g, p, &name, cat, 1)?;
            acts.push((name.clone(), x));
            x = self.attend(g, p, &name, x, &mut acts)?;
        }
        let hidden = Self::conv_relu(g, p, "det.hidden", bottleneck, 1)?;
        acts.push(("det.hidden".into(), hidden));
        let (c, gh, gw) = (g.shape(hidden)[0], g.shape(hidden)[1], g.shape(hidden)[2]);
        let flat = g.reshape(hidden, &[c, gh * gw])?;
        let out = g.matmul(p.var("det.out.w")?, flat)?;
        let out = crate::layers::add_channel_bias(g, out, p.var("det.out.b")?)?;
        let det = g.gather(
            out,
            self.head_index.clone(),
            &[self.anchors.len(), cfg.head_width()],
        )?;
        let (c0, h, w) = (g.shape(x)[0], g.shape(x)[1], g.shape(x)[2]);
        let flat = g.reshape(x, &[c0, h * w])?;
        let logits = g.matmul(p.var("seg.out.w")?, flat)?;
        let logits = crate::layers::add_channel_bias(g, logits, p.var("seg.out.b")?)?;
        let seg = g.sigmoid(logits)?;
        let seg = g.reshape(seg, &[cfg.seg_channels, h, w])?;
        acts.push(("seg.out".into(), seg));
        Ok(ForwardOutput {
            det,
            seg,
            activations: acts,
        })
    }
}

/// Scale 8-bit gray levels to roughly zero-mean unit-range floats.
pub fn image_tensor<T: Scalar>(pixels: &[u8], size: usize) -> Result<Tensor<T>> {
    Tensor::new(
        vec![1, size, size],
        pixels
            .iter()
            .map(|&v| T::of(v as f64 / 127.5 - 1.0))
            .collect(),
    )
}

/// Post-processing settings for inference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    /// Detections below this score are discarded before NMS.
    pub min_score: f64,
    pub nms_iou: f64,
    pub max_detections: usize,
    /// Binarization threshold of the segmentation map.
    pub mask_threshold: f64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            min_score: 0.05,
            nms_iou: 0.5,
            max_detections: 20,
            mask_threshold: 0.5,
        }
    }
}

/// Decoded outputs for one image.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub detections: Vec<Detection>,
    /// Per-pixel foreground probability (max over segmentation channels).
    pub probs: Vec<f64>,
}

/// Named activation tensors of one forward pass.
pub type NetworkActivations<T> = Vec<(String, Tensor<T>)>;

impl<T: Scalar> Model<T> {
    pub fn build(cfg: NetworkConfig, seed: u64) -> Result<Self> {
        let net = Network::new(cfg)?;
        let params = net.init_params(seed)?;
        Ok(Self { net, params })
    }

    /// Forward without gradients, returning head outputs and activations.
    pub fn run(&self, image: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>, NetworkActivations<T>)> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g)?;
        let x = g.leaf(image.clone())?;
        let out = self.net.forward(&mut g, &p, x)?;
        let acts = out
            .activations
            .iter()
            .map(|(n, v)| (n.clone(), g.value(*v).clone()))
            .collect();
        Ok((g.value(out.det).clone(), g.value(out.seg).clone(), acts))
    }

    pub fn predict(&self, image: &Tensor<T>, inf: &InferenceConfig) -> Result<Prediction> {
        let (det, seg, _) = self.run(image)?;
        Ok(decode_outputs(&self.net, &det, &seg, inf))
    }
}

/// Turn raw head outputs into scored detections and a probability map.
pub fn decode_outputs<T: Scalar>(
    net: &Network,
    det: &Tensor<T>,
    seg: &Tensor<T>,
    inf: &InferenceConfig,
) -> Prediction {
    let cfg = &net.cfg;
    let hw = cfg.head_width();
    let s = cfg.input_size;
    let mut dets = Vec::new();
    for (i, anchor) in net.anchors.iter().enumerate() {
        let row: Vec<f64> = det.data()[i * hw..(i + 1) * hw]
            .iter()
            .map(|v| v.as_f64())
            .collect();
        let p = crate::losses::anchor_prediction_from_logits(&row, cfg.classes);
        let score = p.objectness * p.p_star();
        if score < inf.min_score {
            continue;
        }
        let bbox = decode_box(anchor, &p.deltas).clip(s, s);
        if !bbox.is_proper() {
            continue;
        }
        dets.push(Detection {
            bbox,
            class_probs: p.class_probs,
            score,
        });
    }
    let mut detections = nms(dets, inf.nms_iou);
    detections.truncate(inf.max_detections);
    let plane = s * s;
    let probs = (0..plane)
        .map(|i| {
            (0..cfg.seg_channels)
                .map(|c| seg.data()[c * plane + i].as_f64())
                .fold(0.0, f64::max)
        })
        .collect();
    Prediction { detections, probs }
}
