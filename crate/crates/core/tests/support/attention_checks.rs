//! Structural invariants of the attention stack on one randomized configuration.

#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scm_core::attention::{
    multi_head_attention, patch_channel_attention, tokenize_with_position, AttentionConfig,
    GramMode, ProjectionWeights, ScmBlock,
};
use scm_core::params::ParamStore;
use scm_core::tensor::{instance_normalize, softmax, Tensor};

fn random(shape: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-scale..scale))
}

fn rows(t: &Tensor<f64>) -> Vec<Vec<f64>> {
    let (n, d) = t.dims2().unwrap();
    (0..n)
        .map(|i| t.data()[i * d..(i + 1) * d].to_vec())
        .collect()
}

/// Check every invariant for the configuration drawn from `seed`.
pub fn check(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let heads = rng.random_range(1..=3);
    let ps = rng.random_range(1..=3);
    let cfg = AttentionConfig {
        patch_size: ps,
        heads,
        layers: rng.random_range(1..=2),
        model_dim: heads * rng.random_range(1..=3),
        mlp_hidden: rng.random_range(1..=6),
        channel_attention: rng.random_bool(0.7),
        gram: if rng.random_bool(0.5) {
            GramMode::Channel
        } else {
            GramMode::Spatial
        },
        positional_encoding: rng.random_bool(0.5),
    };
    let (c, h, w) = (
        rng.random_range(1..=4),
        ps * rng.random_range(1..=3),
        ps * rng.random_range(1..=3),
    );
    let ctx = format!("seed {seed}, {cfg:?}, map {c}x{h}x{w}");

    // shape preservation of the whole block
    let block = ScmBlock::new(cfg.clone(), c, h, w, "b").map_err(|e| format!("{ctx}: {e}"))?;
    let mut store = ParamStore::<f64>::new();
    block
        .init_params(&mut store, &mut rng)
        .map_err(|e| e.to_string())?;
    let x = random(&[c, h, w], 1.0, &mut rng);
    let y = block
        .forward_tensor(&store, &x)
        .map_err(|e| format!("{ctx}: {e}"))?;
    if y.shape() != x.shape() || !y.is_finite() {
        return Err(format!("{ctx}: block output {:?}", y.shape()));
    }

    // channel attention keeps the patch shape
    let patch = random(&[ps, ps, c], 1.0, &mut rng);
    let out = patch_channel_attention(&patch, cfg.gram).map_err(|e| e.to_string())?;
    if out.shape() != patch.shape() {
        return Err(format!("{ctx}: channel attention changed shape"));
    }

    // tokens and heads
    let n = rng.random_range(1..=6);
    let d = cfg.model_dim;
    let dh = d / heads;
    let tokens = random(&[n, d], 2.0, &mut rng);
    let weights =
        ProjectionWeights::<f64>::random(heads, d, &mut rng).map_err(|e| e.to_string())?;
    let ma = multi_head_attention(&tokens, &weights).map_err(|e| e.to_string())?;
    if ma.shape() != [n, dh] {
        return Err(format!("{ctx}: attention output {:?}", ma.shape()));
    }

    // softmax rows of every head's weight matrix sum to one
    let per_head: Vec<Tensor<f64>> = (0..heads)
        .map(|k| {
            let q = tokens.matmul(&weights.wq[k]).unwrap();
            let kk = tokens.matmul(&weights.wk[k]).unwrap();
            let logits = q
                .matmul(&kk.transpose2().unwrap())
                .unwrap()
                .map(|v| v / (dh as f64).sqrt());
            let a = softmax(&instance_normalize(&logits).unwrap(), 1).unwrap();
            for row in rows(&a) {
                let s: f64 = row.iter().sum();
                if (s - 1.0).abs() > 1e-6 || row.iter().any(|&v| v < 0.0) {
                    return Err(format!("{ctx}: head {k} softmax row sums to {s}"));
                }
            }
            let single = ProjectionWeights {
                wq: vec![weights.wq[k].clone()],
                wk: vec![weights.wk[k].clone()],
                wv: vec![weights.wv[k].clone()],
            };
            multi_head_attention(&tokens, &single).map_err(|e| e.to_string())
        })
        .collect::<Result<_, _>>()?;

    // the head average lies inside the per-head envelope
    for (i, &v) in ma.data().iter().enumerate() {
        let lo = per_head
            .iter()
            .map(|t| t.data()[i])
            .fold(f64::INFINITY, f64::min);
        let hi = per_head
            .iter()
            .map(|t| t.data()[i])
            .fold(f64::NEG_INFINITY, f64::max);
        if v < lo - 1e-12 || v > hi + 1e-12 {
            return Err(format!("{ctx}: averaged value {v} outside [{lo}, {hi}]"));
        }
    }

    // without position codes, permuting patches permutes the attention output
    let patches: Vec<Tensor<f64>> = (0..n)
        .map(|_| random(&[ps, ps, c], 1.0, &mut rng))
        .collect();
    let embed = random(&[ps * ps * c, d], 1.0, &mut rng);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let shuffled: Vec<Tensor<f64>> = perm.iter().map(|&i| patches[i].clone()).collect();
    let base = multi_head_attention(
        &tokenize_with_position(&patches, &embed, false).unwrap(),
        &weights,
    )
    .unwrap();
    let moved = multi_head_attention(
        &tokenize_with_position(&shuffled, &embed, false).unwrap(),
        &weights,
    )
    .unwrap();
    let (br, mr) = (rows(&base), rows(&moved));
    for (k, &i) in perm.iter().enumerate() {
        if br[i].iter().zip(&mr[k]).any(|(a, b)| (a - b).abs() > 1e-10) {
            return Err(format!("{ctx}: not permutation equivariant"));
        }
    }
    Ok(())
}
