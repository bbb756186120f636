//! Convolution, deconvolution and affine layers composed from graph primitives.
//!
//! Feature maps are channel-first `[C, H, W]` tensors.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use crate::autograd::{Graph, Var, ZERO_INDEX};
use crate::error::{shape_err, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
enum IndexKey {
    Im2col {
        c: usize,
        h: usize,
        w: usize,
        k: usize,
        stride: usize,
        pad: usize,
    },
    Deconv {
        c: usize,
        h: usize,
        w: usize,
    },
    RowBroadcast {
        rows: usize,
        cols: usize,
    },
    ChannelBroadcast {
        c: usize,
        hw: usize,
    },
}

thread_local! {
    static INDEX_CACHE: RefCell<HashMap<IndexKey, Arc<[u32]>>> = RefCell::new(HashMap::new());
}

fn cached(key: IndexKey, build: impl FnOnce() -> Vec<u32>) -> Arc<[u32]> {
    INDEX_CACHE.with(|c| {
        c.borrow_mut()
            .entry(key)
            .or_insert_with(|| build().into())
            .clone()
    })
}

pub(crate) fn dims3<T: Scalar>(g: &Graph<T>, x: Var) -> Result<(usize, usize, usize)> {
    match g.shape(x) {
        &[c, h, w] => Ok((c, h, w)),
        s => Err(shape_err!("expected a [C, H, W] feature map, got {s:?}")),
    }
}

pub fn conv_output_size(size: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if size + 2 * pad < k || stride == 0 {
        return Err(shape_err!(
            "kernel {k} does not fit input {size} with padding {pad}"
        ));
    }
    Ok((size + 2 * pad - k) / stride + 1)
}

/// `x · w + b` for `x: [n, in]`, `w: [in, out]`, `b: [out]`.
pub fn linear<T: Scalar>(g: &mut Graph<T>, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
    let y = g.matmul(x, w)?;
    match b {
        Some(b) => add_row_bias(g, y, b),
        None => Ok(y),
    }
}

/// Adds `b: [cols]` to every row of `y: [rows, cols]`.
pub fn add_row_bias<T: Scalar>(g: &mut Graph<T>, y: Var, b: Var) -> Result<Var> {
    let (rows, cols) = g.value(y).dims2()?;
    if g.value(b).numel() != cols {
        return Err(shape_err!("bias {:?} for rows of width {cols}", g.shape(b)));
    }
    let idx = cached(IndexKey::RowBroadcast { rows, cols }, || {
        (0..rows * cols).map(|i| (i % cols) as u32).collect()
    });
    let bb = g.gather(b, idx, &[rows, cols])?;
    g.add(y, bb)
}

/// Adds `b: [C]` to every pixel of a `[C, ...]` tensor.
pub fn add_channel_bias<T: Scalar>(g: &mut Graph<T>, y: Var, b: Var) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    let c = shape[0];
    let hw: usize = shape[1..].iter().product();
    if g.value(b).numel() != c {
        return Err(shape_err!("bias {:?} for {c} channels", g.shape(b)));
    }
    let idx = cached(IndexKey::ChannelBroadcast { c, hw }, || {
        (0..c * hw).map(|i| (i / hw) as u32).collect()
    });
    let bb = g.gather(b, idx, &shape)?;
    g.add(y, bb)
}

/// Square-kernel convolution with zero padding; `w: [C_out, C_in·k·k]`, `b: [C_out]`.
pub fn conv2d<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    w: Var,
    b: Var,
    k: usize,
    stride: usize,
    pad: usize,
) -> Result<Var> {
    let (c, h, wd) = dims3(g, x)?;
    let (cout, fan_in) = g.value(w).dims2()?;
    if fan_in != c * k * k {
        return Err(shape_err!(
            "conv weight {:?} for {c} input channels and kernel {k}",
            g.shape(w)
        ));
    }
    let ho = conv_output_size(h, k, stride, pad)?;
    let wo = conv_output_size(wd, k, stride, pad)?;
    let idx = cached(
        IndexKey::Im2col {
            c,
            h,
            w: wd,
            k,
            stride,
            pad,
        },
        || {
            let mut idx = Vec::with_capacity(c * k * k * ho * wo);
            for ci in 0..c {
                for ky in 0..k {
                    for kx in 0..k {
                        for oy in 0..ho {
                            for ox in 0..wo {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    idx.push(ZERO_INDEX);
                                } else {
                                    idx.push(((ci * h + iy as usize) * wd + ix as usize) as u32);
                                }
                            }
                        }
                    }
                }
            }
            idx
        },
    );
    let cols = g.gather(x, idx, &[c * k * k, ho * wo])?;
    let y = g.matmul(w, cols)?;
    let y = g.reshape(y, &[cout, ho, wo])?;
    add_channel_bias(g, y, b)
}

/// Stride-2, kernel-2 transposed convolution doubling H and W;
/// `w: [C_out·4, C_in]` with rows ordered (out channel, dy, dx).
pub fn deconv2x2<T: Scalar>(g: &mut Graph<T>, x: Var, w: Var, b: Var) -> Result<Var> {
    let (c, h, wd) = dims3(g, x)?;
    let (rows, cin) = g.value(w).dims2()?;
    if cin != c || rows % 4 != 0 {
        return Err(shape_err!(
            "deconv weight {:?} for {c} input channels",
            g.shape(w)
        ));
    }
    let cout = rows / 4;
    let flat = g.reshape(x, &[c, h * wd])?;
    let y = g.matmul(w, flat)?;
    let idx = cached(IndexKey::Deconv { c: cout, h, w: wd }, || {
        let (oh, ow) = (2 * h, 2 * wd);
        let mut idx = Vec::with_capacity(cout * oh * ow);
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let row = co * 4 + (oy % 2) * 2 + ox % 2;
                    idx.push((row * h * wd + (oy / 2) * wd + ox / 2) as u32);
                }
            }
        }
        idx
    });
    let up = g.gather(y, idx, &[cout, 2 * h, 2 * wd])?;
    add_channel_bias(g, up, b)
}

/// Concatenate feature maps along the channel axis.
pub fn concat_channels<T: Scalar>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    let (ca, h, w) = dims3(g, a)?;
    let (cb, h2, w2) = dims3(g, b)?;
    if (h, w) != (h2, w2) {
        return Err(shape_err!(
            "concat of {:?} and {:?}",
            g.shape(a),
            g.shape(b)
        ));
    }
    g.concat(&[a, b], &[ca + cb, h, w])
}
