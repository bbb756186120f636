//! Finite-difference checks of every differentiable graph op and of the
//! full model loss.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scm_core::attention::{
    channel_attention_op, multi_head_attention_op, tokenize_op, AttentionConfig, GramMode,
    HeadVars, ScmBlock,
};
use scm_core::autograd::{Graph, Var};
use scm_core::boxes::BBox;
use scm_core::data::{generate_scene, SceneSpec};
use scm_core::gradcheck::check_gradients;
use scm_core::layers::{
    add_channel_bias, add_row_bias, concat_channels, conv2d, deconv2x2, linear,
};
use scm_core::losses::{
    bce_dice_op, detection_loss_op, roi_crop_op, segmentation_loss_op, AnchorTarget, LossConfig,
    RoiTarget,
};
use scm_core::network::{BlockTemplate, Model, NetworkConfig, Variant};
use scm_core::objective::{
    batch_loss_graph, build_targets, record_tensor, Objective, SamplingConfig, SegMode,
};
use scm_core::params::{BoundParams, ParamStore};
use scm_core::tensor::Tensor;
use scm_core::Result;

const STEP: f64 = 1e-6;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Weighted sum so that every output coordinate matters.
fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = g.shape(y).to_vec();
    let r = g.leaf(random(&shape, &mut rng))?;
    let p = g.mul(y, r)?;
    g.sum(p)
}

type Case = (
    &'static str,
    Vec<Tensor<f64>>,
    Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>>,
);

fn cases() -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut r = |s: &[usize]| random(s, &mut rng);
    let positive = |t: Tensor<f64>| t.map(|v| 0.1 + 0.8 * (v * 0.5 + 0.5));
    let mut out: Vec<Case> = vec![
        (
            "add",
            vec![r(&[3, 4]), r(&[3, 4])],
            Box::new(|g, v| {
                let y = g.add(v[0], v[1])?;
                project(g, y, 1)
            }),
        ),
        (
            "sub",
            vec![r(&[3, 4]), r(&[3, 4])],
            Box::new(|g, v| {
                let y = g.sub(v[0], v[1])?;
                project(g, y, 2)
            }),
        ),
        (
            "mul",
            vec![r(&[3, 4]), r(&[3, 4])],
            Box::new(|g, v| {
                let y = g.mul(v[0], v[1])?;
                project(g, y, 3)
            }),
        ),
        (
            "scale",
            vec![r(&[5])],
            Box::new(|g, v| {
                let y = g.scale(v[0], -1.7)?;
                project(g, y, 4)
            }),
        ),
        (
            "matmul",
            vec![r(&[3, 4]), r(&[4, 2])],
            Box::new(|g, v| {
                let y = g.matmul(v[0], v[1])?;
                project(g, y, 5)
            }),
        ),
        (
            "matmul_bt",
            vec![r(&[3, 4]), r(&[5, 4])],
            Box::new(|g, v| {
                let y = g.matmul_bt(v[0], v[1])?;
                project(g, y, 6)
            }),
        ),
        (
            "gather",
            vec![r(&[6])],
            Box::new(|g, v| {
                let idx: std::sync::Arc<[u32]> = vec![0, 5, 5, 2, u32::MAX, 1].into();
                let y = g.gather(v[0], idx, &[2, 3])?;
                project(g, y, 7)
            }),
        ),
        (
            "concat",
            vec![r(&[2, 3]), r(&[4])],
            Box::new(|g, v| {
                let y = g.concat(&[v[0], v[1]], &[10])?;
                project(g, y, 8)
            }),
        ),
        (
            "reshape",
            vec![r(&[2, 6])],
            Box::new(|g, v| {
                let y = g.reshape(v[0], &[3, 4])?;
                project(g, y, 9)
            }),
        ),
        (
            "relu",
            vec![r(&[12])],
            Box::new(|g, v| {
                let y = g.relu(v[0])?;
                project(g, y, 10)
            }),
        ),
        (
            "sigmoid",
            vec![r(&[12])],
            Box::new(|g, v| {
                let y = g.sigmoid(v[0])?;
                project(g, y, 11)
            }),
        ),
        (
            "softmax_rows",
            vec![r(&[3, 5])],
            Box::new(|g, v| {
                let y = g.softmax(v[0], 1)?;
                project(g, y, 12)
            }),
        ),
        (
            "softmax_cols",
            vec![r(&[3, 5])],
            Box::new(|g, v| {
                let y = g.softmax(v[0], 0)?;
                project(g, y, 13)
            }),
        ),
        (
            "instance_norm",
            vec![r(&[4, 5])],
            Box::new(|g, v| {
                let y = g.instance_norm(v[0])?;
                project(g, y, 14)
            }),
        ),
        (
            "layer_norm",
            vec![r(&[3, 6]), r(&[6]), r(&[6])],
            Box::new(|g, v| {
                let y = g.layer_norm(v[0], v[1], v[2])?;
                project(g, y, 15)
            }),
        ),
        (
            "mean",
            vec![r(&[7])],
            Box::new(|g, v| {
                let m = g.mean(v[0])?;
                let s = g.mul(m, m)?;
                g.sum(s)
            }),
        ),
        (
            "linear",
            vec![r(&[3, 4]), r(&[4, 5]), r(&[5])],
            Box::new(|g, v| {
                let y = linear(g, v[0], v[1], Some(v[2]))?;
                project(g, y, 16)
            }),
        ),
        (
            "row_bias",
            vec![r(&[3, 4]), r(&[4])],
            Box::new(|g, v| {
                let y = add_row_bias(g, v[0], v[1])?;
                project(g, y, 17)
            }),
        ),
        (
            "channel_bias",
            vec![r(&[3, 2, 2]), r(&[3])],
            Box::new(|g, v| {
                let y = add_channel_bias(g, v[0], v[1])?;
                project(g, y, 18)
            }),
        ),
        (
            "conv3x3_s1",
            vec![r(&[2, 5, 5]), r(&[3, 18]), r(&[3])],
            Box::new(|g, v| {
                let y = conv2d(g, v[0], v[1], v[2], 3, 1, 1)?;
                project(g, y, 19)
            }),
        ),
        (
            "conv3x3_s2",
            vec![r(&[2, 6, 6]), r(&[3, 18]), r(&[3])],
            Box::new(|g, v| {
                let y = conv2d(g, v[0], v[1], v[2], 3, 2, 1)?;
                project(g, y, 20)
            }),
        ),
        (
            "conv1x1",
            vec![r(&[3, 4, 4]), r(&[2, 3]), r(&[2])],
            Box::new(|g, v| {
                let y = conv2d(g, v[0], v[1], v[2], 1, 1, 0)?;
                project(g, y, 21)
            }),
        ),
        (
            "deconv2x2",
            vec![r(&[3, 3, 2]), r(&[8, 3]), r(&[2])],
            Box::new(|g, v| {
                let y = deconv2x2(g, v[0], v[1], v[2])?;
                project(g, y, 22)
            }),
        ),
        (
            "concat_channels",
            vec![r(&[2, 3, 3]), r(&[1, 3, 3])],
            Box::new(|g, v| {
                let y = concat_channels(g, v[0], v[1])?;
                project(g, y, 23)
            }),
        ),
        (
            "channel_attention_channel_gram",
            vec![r(&[2, 4, 3])],
            Box::new(|g, v| {
                let y = channel_attention_op(g, v[0], GramMode::Channel)?;
                project(g, y, 24)
            }),
        ),
        (
            "channel_attention_spatial_gram",
            vec![r(&[2, 4, 3])],
            Box::new(|g, v| {
                let y = channel_attention_op(g, v[0], GramMode::Spatial)?;
                project(g, y, 25)
            }),
        ),
        (
            "tokenize",
            vec![r(&[3, 4, 2]), r(&[8, 4])],
            Box::new(|g, v| {
                let y = tokenize_op(g, v[0], v[1], true)?;
                project(g, y, 26)
            }),
        ),
        (
            "multi_head_attention",
            vec![
                r(&[5, 4]),
                r(&[4, 2]),
                r(&[4, 2]),
                r(&[4, 2]),
                r(&[4, 2]),
                r(&[4, 2]),
                r(&[4, 2]),
            ],
            Box::new(|g, v| {
                let heads = [
                    HeadVars {
                        wq: v[1],
                        wk: v[2],
                        wv: v[3],
                    },
                    HeadVars {
                        wq: v[4],
                        wk: v[5],
                        wv: v[6],
                    },
                ];
                let y = multi_head_attention_op(g, v[0], &heads)?;
                project(g, y, 27)
            }),
        ),
        (
            "bce_dice",
            vec![positive(r(&[9]))],
            Box::new(|g, v| {
                bce_dice_op(
                    g,
                    v[0],
                    &[true, false, true, true, false, false, true, false, true],
                )
            }),
        ),
        (
            "roi_crop",
            vec![r(&[2, 6, 6])],
            Box::new(|g, v| {
                let y = roi_crop_op(g, v[0], &BBox::new(0.5, 1.0, 5.0, 6.0), 3)?;
                project(g, y, 28)
            }),
        ),
        (
            "segmentation_loss",
            vec![positive(r(&[1, 6, 6]))],
            Box::new(|g, v| {
                let rois = vec![
                    RoiTarget {
                        roi: BBox::new(0.0, 0.0, 4.0, 4.0),
                        target: vec![true, false, false, true],
                    },
                    RoiTarget {
                        roi: BBox::new(2.0, 1.0, 6.0, 6.0),
                        target: vec![false, true, true, true],
                    },
                ];
                segmentation_loss_op(g, v[0], &rois, 2)
            }),
        ),
        (
            "detection_loss",
            vec![r(&[4, 8])],
            Box::new(|g, v| {
                let t = |positive, class, d: [f64; 4]| AnchorTarget {
                    positive,
                    class,
                    deltas: d,
                    gt_index: positive.then_some(0),
                };
                let targets = vec![
                    t(true, 1, [0.1, -0.2, 0.3, 0.0]),
                    t(false, 0, [0.0; 4]),
                    t(true, 2, [1.5, 0.4, -2.0, 0.2]),
                    t(false, 0, [0.0; 4]),
                ];
                detection_loss_op(g, v[0], &targets, &[0, 1, 2, 3], &LossConfig::default())
            }),
        ),
    ];

    let cfg = AttentionConfig {
        patch_size: 2,
        heads: 2,
        layers: 2,
        model_dim: 4,
        mlp_hidden: 3,
        ..Default::default()
    };
    let block = ScmBlock::new(cfg, 2, 4, 2, "b").unwrap();
    let mut store = ParamStore::<f64>::new();
    block
        .init_params(&mut store, &mut ChaCha8Rng::seed_from_u64(3))
        .unwrap();
    let names: Vec<String> = store.names().to_vec();
    let mut inputs = vec![r(&[2, 4, 2])];
    inputs.extend(store.iter().map(|(_, t)| t.clone()));
    out.push((
        "scm_block",
        inputs,
        Box::new(move |g, v| {
            let p = BoundParams::from_parts(&names, &v[1..]);
            let y = block.forward(g, &p, v[0])?;
            project(g, y, 29)
        }),
    ));
    out
}

/// Worst relative error of every op case, by name.
pub fn op_errors() -> Vec<(&'static str, f64)> {
    cases()
        .into_iter()
        .map(|(name, inputs, f)| {
            let err = check_gradients(|g, v| f(g, v), &inputs, STEP, None)
                .unwrap_or_else(|e| panic!("{name}: {e}"));
            (name, err)
        })
        .collect()
}

/// Reduced-width network used for the whole-model check.
pub fn reduced_network() -> NetworkConfig {
    NetworkConfig {
        input_size: 16,
        stem_width: 2,
        stage_widths: vec![3, 4],
        variant: Variant::Scm,
        attention: BlockTemplate {
            patch_size: 4,
            heads: 2,
            layers: 1,
            model_dim: 4,
            mlp_hidden: 4,
            ..Default::default()
        },
        classes: 6,
        seg_channels: 1,
        anchor_scales: vec![6.0, 10.0],
        anchor_ratios: vec![0.5, 1.0, 2.0],
        mask_resolution: 4,
    }
}

/// Worst relative error of the mean joint loss over a 2-image batch with
/// respect to a sample of every parameter tensor.
pub fn full_model_error(per_tensor: usize) -> f64 {
    let model = Model::<f64>::build(reduced_network(), 5).unwrap();
    let spec = SceneSpec {
        seed: 3,
        width: 16,
        height: 16,
        min_defects: 1,
        max_defects: 2,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let loss = LossConfig::default();
    let sampling = SamplingConfig {
        anchors_per_image: 16,
        ..Default::default()
    };
    let mut images = Vec::new();
    let mut targets = Vec::new();
    for i in 0..2 {
        let rec = generate_scene(&spec, i).unwrap();
        images.push(record_tensor::<f64>(&rec).unwrap());
        targets.push(
            build_targets(
                &model.net,
                &rec,
                &loss,
                &sampling,
                SegMode::Binary,
                &mut rng,
            )
            .unwrap(),
        );
    }
    let names = model.params.names().to_vec();
    let inputs: Vec<Tensor<f64>> = model.params.iter().map(|(_, t)| t.clone()).collect();
    let net = &model.net;
    check_gradients(
        |g, v| {
            let p = BoundParams::from_parts(&names, v);
            let batch: Vec<_> = images.iter().zip(&targets).collect();
            Ok(batch_loss_graph(g, net, &p, &batch, &loss, Objective::Joint)?.0)
        },
        &inputs,
        STEP,
        Some((per_tensor, 11)),
    )
    .unwrap()
}
