//! Spatial and channel-wise multi-head attention (SCM) block.
//!
//! One layer of the block:
//!
//! 1. split the `[C, H, W]` map into `P×P` patches (spatial axes only);
//! 2. patch-level channel attention `ô = o + softmax_C(ō ōᵀ ō)` per patch;
//! 3. flatten each patch into a token, project to `model_dim`, add the
//!    sinusoidal position code;
//! 4. layer-norm, then `N` attention heads whose outputs are averaged;
//! 5. `O = MA + MLP(LN(MA))`;
//! 6. project the tokens back to patches and add them onto the attended map.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{config_err, shape_err, Result};
use crate::layers::{dims3, linear};
use crate::params::{BoundParams, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{matmul_acc, matmul_at_acc, matmul_bt_acc, Tensor};

/// Which Gram matrix forms the channel-attention logits.
///
/// Both evaluate `ō ōᵀ ō`; they differ in association order and cost.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GramMode {
    /// `ō · (ōᵀ ō)` with a `C×C` channel Gram.
    #[default]
    Channel,
    /// `(ō ōᵀ) · ō` with an `hw×hw` spatial Gram.
    Spatial,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub patch_size: usize,
    pub heads: usize,
    pub layers: usize,
    pub model_dim: usize,
    pub mlp_hidden: usize,
    /// Run patch-level channel attention before the token stage.
    #[serde(default = "yes")]
    pub channel_attention: bool,
    #[serde(default)]
    pub gram: GramMode,
    #[serde(default = "yes")]
    pub positional_encoding: bool,
}

fn yes() -> bool {
    true
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self {
            patch_size: 16,
            heads: 4,
            layers: 2,
            model_dim: 64,
            mlp_hidden: 128,
            channel_attention: true,
            gram: GramMode::Channel,
            positional_encoding: true,
        }
    }
}

impl AttentionConfig {
    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 {
            return Err(config_err!("patch_size must be >= 1"));
        }
        if self.heads == 0 {
            return Err(config_err!("heads must be >= 1"));
        }
        if self.model_dim == 0 || !self.model_dim.is_multiple_of(self.heads) {
            return Err(config_err!(
                "model_dim {} is not divisible by {} heads",
                self.model_dim,
                self.heads
            ));
        }
        if self.mlp_hidden == 0 {
            return Err(config_err!("mlp_hidden must be >= 1"));
        }
        Ok(())
    }

    /// Number of tokens for an `h × w` map.
    pub fn sequence_length(&self, h: usize, w: usize) -> Result<usize> {
        let p = self.patch_size;
        if p == 0 || !h.is_multiple_of(p) || !w.is_multiple_of(p) {
            return Err(config_err!(
                "{h}x{w} feature map is not divisible by patch size {p}"
            ));
        }
        Ok((h / p) * (w / p))
    }
}

// ---------------------------------------------------------------------------
// patches

/// Gather index taking `[C, H, W]` to `[n_p, P·P, C]`, patches in row-major order.
pub fn partition_index(c: usize, h: usize, w: usize, p: usize) -> Result<Arc<[u32]>> {
    if p == 0 || !h.is_multiple_of(p) || !w.is_multiple_of(p) {
        return Err(config_err!(
            "{h}x{w} feature map is not divisible by patch size {p}"
        ));
    }
    let (py, px) = (h / p, w / p);
    let mut idx = Vec::with_capacity(c * h * w);
    for by in 0..py {
        for bx in 0..px {
            for dy in 0..p {
                for dx in 0..p {
                    for ch in 0..c {
                        idx.push(((ch * h + by * p + dy) * w + bx * p + dx) as u32);
                    }
                }
            }
        }
    }
    Ok(idx.into())
}

/// Gather index taking `[n_p, P·P, C]` back to `[C, H, W]`.
pub fn merge_index(c: usize, h: usize, w: usize, p: usize) -> Result<Arc<[u32]>> {
    if p == 0 || !h.is_multiple_of(p) || !w.is_multiple_of(p) {
        return Err(shape_err!(
            "{h}x{w} map cannot be assembled from {p}x{p} patches"
        ));
    }
    let px = w / p;
    let mut idx = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let patch = (y / p) * px + x / p;
                let pix = (y % p) * p + x % p;
                idx.push(((patch * p * p + pix) * c + ch) as u32);
            }
        }
    }
    Ok(idx.into())
}

fn apply_index<T: Scalar>(src: &[T], idx: &[u32]) -> Vec<T> {
    idx.iter().map(|&i| src[i as usize]).collect()
}

/// Split a `[C, H, W]` map into `P×P×C` patches in row-major patch order.
pub fn partition_patches<T: Scalar>(f: &Tensor<T>, p: usize) -> Result<Vec<Tensor<T>>> {
    let (c, h, w) = match f.shape() {
        &[c, h, w] => (c, h, w),
        s => return Err(shape_err!("expected [C, H, W], got {s:?}")),
    };
    let flat = apply_index(f.data(), &partition_index(c, h, w, p)?);
    flat.chunks(p * p * c)
        .map(|chunk| Tensor::new(vec![p, p, c], chunk.to_vec()))
        .collect()
}

/// Inverse of [`partition_patches`] for an `h × w` map.
pub fn merge_patches<T: Scalar>(
    patches: &[Tensor<T>],
    p: usize,
    h: usize,
    w: usize,
) -> Result<Tensor<T>> {
    let first = patches
        .first()
        .ok_or_else(|| shape_err!("no patches to merge"))?;
    let c = match first.shape() {
        &[a, b, c] if a == p && b == p => c,
        s => return Err(shape_err!("patch of shape {s:?} for patch size {p}")),
    };
    if p == 0 || !h.is_multiple_of(p) || !w.is_multiple_of(p) || patches.len() != (h / p) * (w / p)
    {
        return Err(shape_err!(
            "{} patches of size {p} cannot tile {h}x{w}",
            patches.len()
        ));
    }
    let mut flat = Vec::with_capacity(c * h * w);
    for t in patches {
        if t.shape() != first.shape() {
            return Err(shape_err!(
                "mixed patch shapes {:?} and {:?}",
                t.shape(),
                first.shape()
            ));
        }
        flat.extend_from_slice(t.data());
    }
    Tensor::new(vec![c, h, w], apply_index(&flat, &merge_index(c, h, w, p)?))
}

// ---------------------------------------------------------------------------
// patch-level channel attention

struct ChannelAttnCache<T> {
    /// Softmax output per patch, `[hw, C]`.
    soft: Vec<T>,
    /// Channel Gram (`C×C`) or spatial Gram (`hw×hw`) per patch.
    gram: Vec<T>,
}

fn channel_attention_forward<T: Scalar>(
    x: &[T],
    np: usize,
    hw: usize,
    c: usize,
    mode: GramMode,
) -> (Vec<T>, ChannelAttnCache<T>) {
    let gsz = match mode {
        GramMode::Channel => c * c,
        GramMode::Spatial => hw * hw,
    };
    let mut out = x.to_vec();
    let mut soft = vec![T::zero(); np * hw * c];
    let mut gram = vec![T::zero(); np * gsz];
    for i in 0..np {
        let o = &x[i * hw * c..(i + 1) * hw * c];
        let gm = &mut gram[i * gsz..(i + 1) * gsz];
        let mut z = vec![T::zero(); hw * c];
        match mode {
            GramMode::Channel => {
                matmul_at_acc(o, o, gm, hw, c, c);
                matmul_acc(o, gm, &mut z, hw, c, c);
            }
            GramMode::Spatial => {
                matmul_bt_acc(o, o, gm, hw, c, hw);
                matmul_acc(gm, o, &mut z, hw, hw, c);
            }
        }
        let s = &mut soft[i * hw * c..(i + 1) * hw * c];
        for r in 0..hw {
            let row = &z[r * c..(r + 1) * c];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut denom = T::zero();
            for j in 0..c {
                let e = (row[j] - max).exp();
                s[r * c + j] = e;
                denom += e;
            }
            for j in 0..c {
                s[r * c + j] /= denom;
                out[(i * hw + r) * c + j] += s[r * c + j];
            }
        }
    }
    (out, ChannelAttnCache { soft, gram })
}

fn channel_attention_backward<T: Scalar>(
    x: &[T],
    gout: &[T],
    cache: &ChannelAttnCache<T>,
    np: usize,
    hw: usize,
    c: usize,
    mode: GramMode,
) -> Vec<T> {
    let gsz = cache.gram.len() / np;
    let mut gx = gout.to_vec();
    for i in 0..np {
        let range = i * hw * c..(i + 1) * hw * c;
        let o = &x[range.clone()];
        let s = &cache.soft[range.clone()];
        let g = &gout[range.clone()];
        let gm = &cache.gram[i * gsz..(i + 1) * gsz];
        let mut dz = vec![T::zero(); hw * c];
        for r in 0..hw {
            let dot: T = (0..c).map(|j| g[r * c + j] * s[r * c + j]).sum();
            for j in 0..c {
                dz[r * c + j] = s[r * c + j] * (g[r * c + j] - dot);
            }
        }
        let dx = &mut gx[range];
        match mode {
            GramMode::Channel => {
                // z = o G, G = oᵀo
                matmul_acc(&dz, gm, dx, hw, c, c);
                let mut dg = vec![T::zero(); c * c];
                matmul_at_acc(o, &dz, &mut dg, hw, c, c);
                let sym: Vec<T> = (0..c * c)
                    .map(|k| dg[k] + dg[(k % c) * c + k / c])
                    .collect();
                matmul_acc(o, &sym, dx, hw, c, c);
            }
            GramMode::Spatial => {
                // z = M o, M = o oᵀ
                matmul_at_acc(gm, &dz, dx, hw, hw, c);
                let mut dm = vec![T::zero(); hw * hw];
                matmul_bt_acc(&dz, o, &mut dm, hw, c, hw);
                let sym: Vec<T> = (0..hw * hw)
                    .map(|k| dm[k] + dm[(k % hw) * hw + k / hw])
                    .collect();
                matmul_acc(&sym, o, dx, hw, hw, c);
            }
        }
    }
    gx
}

/// Channel attention over every patch of `x: [n_p, hw, C]` as one graph node.
pub fn channel_attention_op<T: Scalar>(g: &mut Graph<T>, x: Var, mode: GramMode) -> Result<Var> {
    let (np, hw, c) = match g.shape(x) {
        &[a, b, c] => (a, b, c),
        s => {
            return Err(shape_err!(
                "channel attention expects [n_p, hw, C], got {s:?}"
            ))
        }
    };
    let (out, _) = channel_attention_forward(g.value(x).data(), np, hw, c, mode);
    let value = Tensor::new(vec![np, hw, c], out)?;
    g.custom(
        &[x],
        value,
        Box::new(move |gout, inputs| {
            let xd = inputs[0].data();
            let (_, cache) = channel_attention_forward(xd, np, hw, c, mode);
            let gx = channel_attention_backward(xd, gout.data(), &cache, np, hw, c, mode);
            vec![Some(
                Tensor::new(vec![np, hw, c], gx).expect("shape preserved"),
            )]
        }),
    )
}

/// `ô = o + softmax_C(ō ōᵀ ō)` for one `h×w×C` patch.
pub fn patch_channel_attention<T: Scalar>(patch: &Tensor<T>, mode: GramMode) -> Result<Tensor<T>> {
    let (h, w, c) = match patch.shape() {
        &[h, w, c] => (h, w, c),
        s => return Err(shape_err!("patch must be h×w×C, got {s:?}")),
    };
    patch.ensure_finite("channel attention input")?;
    let (out, _) = channel_attention_forward(patch.data(), 1, h * w, c, mode);
    let out = Tensor::new(vec![h, w, c], out)?;
    out.ensure_finite("channel attention output")?;
    Ok(out)
}

// ---------------------------------------------------------------------------
// tokens and heads

/// Fixed sinusoidal position code, `[len, dim]`.
pub fn positional_encoding<T: Scalar>(len: usize, dim: usize) -> Tensor<T> {
    Tensor::from_fn(&[len, dim], |i| {
        let (pos, j) = ((i / dim) as f64, i % dim);
        let freq = 10000f64.powf((2 * (j / 2)) as f64 / dim as f64);
        T::of(if j % 2 == 0 {
            (pos / freq).sin()
        } else {
            (pos / freq).cos()
        })
    })
}

/// Flatten `[n_p, hw, C]` patches into tokens, project with `embed: [hw·C, D]`
/// and optionally add the position code.
pub fn tokenize_op<T: Scalar>(
    g: &mut Graph<T>,
    patches: Var,
    embed: Var,
    position: bool,
) -> Result<Var> {
    let (np, hw, c) = match g.shape(patches) {
        &[a, b, c] => (a, b, c),
        s => return Err(shape_err!("tokenize expects [n_p, hw, C], got {s:?}")),
    };
    let flat = g.reshape(patches, &[np, hw * c])?;
    let t = g.matmul(flat, embed)?;
    if !position {
        return Ok(t);
    }
    let dim = g.shape(t)[1];
    let pe = g.leaf(positional_encoding(np, dim))?;
    g.add(t, pe)
}

/// Query/key/value projections of one head, each `[D, D/N]`.
#[derive(Clone, Copy, Debug)]
pub struct HeadVars {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
}

/// Averaged heads `MA = (A¹ + … + Aᴺ) / N` with
/// `Aⁿ = softmax(instance_norm(Q Kᵀ / √d_h)) V`; no output projection.
pub fn multi_head_attention_op<T: Scalar>(
    g: &mut Graph<T>,
    tokens: Var,
    heads: &[HeadVars],
) -> Result<Var> {
    if heads.is_empty() {
        return Err(config_err!("multi-head attention needs at least one head"));
    }
    let dim = g.value(tokens).dims2()?.1;
    let mut acc: Option<Var> = None;
    for h in heads {
        let (d_in, d_h) = g.value(h.wq).dims2()?;
        if d_in != dim {
            return Err(config_err!(
                "head projection {:?} for tokens of width {dim}",
                g.shape(h.wq)
            ));
        }
        let q = g.matmul(tokens, h.wq)?;
        let k = g.matmul(tokens, h.wk)?;
        let v = g.matmul(tokens, h.wv)?;
        let logits = g.matmul_bt(q, k)?;
        let logits = g.scale(logits, T::one() / T::of(d_h as f64).sqrt())?;
        let normed = g.instance_norm(logits)?;
        let weights = g.softmax(normed, 1)?;
        let a = g.matmul(weights, v)?;
        acc = Some(match acc {
            None => a,
            Some(prev) => g.add(prev, a)?,
        });
    }
    let sum = acc.expect("at least one head");
    g.scale(sum, T::one() / T::of(heads.len() as f64))
}

/// Per-head projection weights as plain tensors.
#[derive(Clone, Debug)]
pub struct ProjectionWeights<T> {
    pub wq: Vec<Tensor<T>>,
    pub wk: Vec<Tensor<T>>,
    pub wv: Vec<Tensor<T>>,
}

impl<T: Scalar> ProjectionWeights<T> {
    pub fn random<R: Rng>(heads: usize, dim: usize, rng: &mut R) -> Result<Self> {
        let mut store = ParamStore::<T>::new();
        let std = 1.0 / (dim as f64).sqrt();
        for h in 0..heads {
            for w in ["q", "k", "v"] {
                store.insert_normal(&format!("{w}{h}"), &[dim, dim / heads], std, rng)?;
            }
        }
        let take = |p: &str| {
            (0..heads)
                .map(|h| store.get(&format!("{p}{h}")).cloned().expect("inserted"))
                .collect()
        };
        Ok(Self {
            wq: take("q"),
            wk: take("k"),
            wv: take("v"),
        })
    }
}

/// Tensor-level [`multi_head_attention_op`].
pub fn multi_head_attention<T: Scalar>(
    tokens: &Tensor<T>,
    weights: &ProjectionWeights<T>,
) -> Result<Tensor<T>> {
    let (_, dim) = tokens.dims2()?;
    let heads = weights.wq.len();
    if heads == 0 || dim % heads != 0 {
        return Err(config_err!(
            "token width {dim} is not divisible by {heads} heads"
        ));
    }
    let mut g = Graph::new();
    let t = g.leaf(tokens.clone())?;
    let mut hv = Vec::with_capacity(heads);
    for h in 0..heads {
        hv.push(HeadVars {
            wq: g.leaf(weights.wq[h].clone())?,
            wk: g.leaf(weights.wk[h].clone())?,
            wv: g.leaf(weights.wv[h].clone())?,
        });
    }
    let out = multi_head_attention_op(&mut g, t, &hv)?;
    Ok(g.value(out).clone())
}

/// Tensor-level tokenization of `P×P×C` patches with projection `embed: [P²C, D]`.
pub fn tokenize_with_position<T: Scalar>(
    patches: &[Tensor<T>],
    embed: &Tensor<T>,
    position: bool,
) -> Result<Tensor<T>> {
    let first = patches
        .first()
        .ok_or_else(|| shape_err!("no patches to tokenize"))?;
    let mut flat = Vec::new();
    for p in patches {
        if p.shape() != first.shape() {
            return Err(shape_err!(
                "mixed patch shapes {:?} and {:?}",
                p.shape(),
                first.shape()
            ));
        }
        flat.extend_from_slice(p.data());
    }
    let per = first.numel();
    let mut g = Graph::new();
    let x = g.leaf(Tensor::new(vec![patches.len(), 1, per], flat)?)?;
    let e = g.leaf(embed.clone())?;
    let t = tokenize_op(&mut g, x, e, position)?;
    Ok(g.value(t).clone())
}

// ---------------------------------------------------------------------------
// block

/// SCM block attached to a feature map of fixed `[C, H, W]` shape.
#[derive(Clone, Debug)]
pub struct ScmBlock {
    pub cfg: AttentionConfig,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub prefix: String,
}

impl ScmBlock {
    pub fn new(
        cfg: AttentionConfig,
        channels: usize,
        height: usize,
        width: usize,
        prefix: impl Into<String>,
    ) -> Result<Self> {
        cfg.validate()?;
        cfg.sequence_length(height, width)?;
        Ok(Self {
            cfg,
            channels,
            height,
            width,
            prefix: prefix.into(),
        })
    }

    fn token_len(&self) -> usize {
        self.cfg.patch_size * self.cfg.patch_size * self.channels
    }

    fn name(&self, layer: usize, what: &str) -> String {
        format!("{}.l{layer}.{what}", self.prefix)
    }

    pub fn init_params<T: Scalar, R: Rng>(
        &self,
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Result<()> {
        let c = &self.cfg;
        let (d, dh, tl) = (c.model_dim, c.head_dim(), self.token_len());
        for l in 0..c.layers {
            store.insert_normal(
                &self.name(l, "embed"),
                &[tl, d],
                1.0 / (tl as f64).sqrt(),
                rng,
            )?;
            store.insert_filled(&self.name(l, "ln1.g"), &[d], 1.0)?;
            store.insert_filled(&self.name(l, "ln1.b"), &[d], 0.0)?;
            for h in 0..c.heads {
                for w in ["wq", "wk", "wv"] {
                    store.insert_normal(
                        &self.name(l, &format!("head{h}.{w}")),
                        &[d, dh],
                        1.0 / (d as f64).sqrt(),
                        rng,
                    )?;
                }
            }
            store.insert_filled(&self.name(l, "ln2.g"), &[dh], 1.0)?;
            store.insert_filled(&self.name(l, "ln2.b"), &[dh], 0.0)?;
            store.insert_normal(
                &self.name(l, "mlp.w1"),
                &[dh, c.mlp_hidden],
                (2.0 / dh as f64).sqrt(),
                rng,
            )?;
            store.insert_filled(&self.name(l, "mlp.b1"), &[c.mlp_hidden], 0.0)?;
            store.insert_normal(
                &self.name(l, "mlp.w2"),
                &[c.mlp_hidden, dh],
                0.5 / (c.mlp_hidden as f64).sqrt(),
                rng,
            )?;
            store.insert_filled(&self.name(l, "mlp.b2"), &[dh], 0.0)?;
            store.insert_normal(
                &self.name(l, "detok.w"),
                &[dh, tl],
                0.5 / (dh as f64).sqrt(),
                rng,
            )?;
            store.insert_filled(&self.name(l, "detok.b"), &[tl], 0.0)?;
        }
        Ok(())
    }

    /// Token stage of one layer: `[n_p, hw, C]` patches in, `[n_p, hw·C]` tokens out.
    pub fn token_stage<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &BoundParams,
        layer: usize,
        patches: Var,
    ) -> Result<Var> {
        let c = &self.cfg;
        let tokens = tokenize_op(
            g,
            patches,
            p.var(&self.name(layer, "embed"))?,
            c.positional_encoding,
        )?;
        let normed = g.layer_norm(
            tokens,
            p.var(&self.name(layer, "ln1.g"))?,
            p.var(&self.name(layer, "ln1.b"))?,
        )?;
        let heads = (0..c.heads)
            .map(|h| {
                Ok(HeadVars {
                    wq: p.var(&self.name(layer, &format!("head{h}.wq")))?,
                    wk: p.var(&self.name(layer, &format!("head{h}.wk")))?,
                    wv: p.var(&self.name(layer, &format!("head{h}.wv")))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let ma = multi_head_attention_op(g, normed, &heads)?;
        let out = self.mlp_residual(g, p, layer, ma)?;
        linear(
            g,
            out,
            p.var(&self.name(layer, "detok.w"))?,
            Some(p.var(&self.name(layer, "detok.b"))?),
        )
    }

    /// `O = MA + MLP(LN(MA))`.
    pub fn mlp_residual<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &BoundParams,
        layer: usize,
        ma: Var,
    ) -> Result<Var> {
        let n = g.layer_norm(
            ma,
            p.var(&self.name(layer, "ln2.g"))?,
            p.var(&self.name(layer, "ln2.b"))?,
        )?;
        let hdn = linear(
            g,
            n,
            p.var(&self.name(layer, "mlp.w1"))?,
            Some(p.var(&self.name(layer, "mlp.b1"))?),
        )?;
        let hdn = g.relu(hdn)?;
        let m = linear(
            g,
            hdn,
            p.var(&self.name(layer, "mlp.w2"))?,
            Some(p.var(&self.name(layer, "mlp.b2"))?),
        )?;
        g.add(ma, m)
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &BoundParams, x: Var) -> Result<Var> {
        let (c, h, w) = dims3(g, x)?;
        if (c, h, w) != (self.channels, self.height, self.width) {
            return Err(shape_err!(
                "block {} built for {:?}, got {:?}",
                self.prefix,
                [self.channels, self.height, self.width],
                [c, h, w]
            ));
        }
        let ps = self.cfg.patch_size;
        let np = self.cfg.sequence_length(h, w)?;
        let part = partition_index(c, h, w, ps)?;
        let merge = merge_index(c, h, w, ps)?;
        let mut cur = x;
        for layer in 0..self.cfg.layers {
            let mut patches = g.gather(cur, part.clone(), &[np, ps * ps, c])?;
            if self.cfg.channel_attention {
                patches = channel_attention_op(g, patches, self.cfg.gram)?;
            }
            let refined = self.token_stage(g, p, layer, patches)?;
            let refined = g.reshape(refined, &[np, ps * ps, c])?;
            let sum = g.add(patches, refined)?;
            cur = g.gather(sum, merge.clone(), &[c, h, w])?;
        }
        Ok(cur)
    }

    /// Tensor-level forward with weights read from `store`.
    pub fn forward_tensor<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        f: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let bound = store.bind(&mut g)?;
        let x = g.leaf(f.clone())?;
        let y = self.forward(&mut g, &bound, x)?;
        Ok(g.value(y).clone())
    }
}
