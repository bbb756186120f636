//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value. Nodes are only
//! ever appended, so index order is a topological order and the backward pass
//! walks the tape once in reverse.

use std::sync::Arc;

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::{matmul_acc, matmul_at_acc, matmul_bt_acc, normalize_slice, Tensor, NORM_EPS};

/// Gather index that reads as zero instead of a source element.
pub const ZERO_INDEX: u32 = u32::MAX;

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule of a fused operation: given the output gradient and the input
/// values, returns one gradient per input (or `None` when it receives none).
pub type CustomBackward<T> = Box<dyn Fn(&Tensor<T>, &[&Tensor<T>]) -> Vec<Option<Tensor<T>>>>;

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Gather {
        src: Var,
        index: Arc<[u32]>,
    },
    Concat(Vec<Var>),
    Reshape(Var),
    Relu(Var),
    Sigmoid(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    InstanceNorm {
        x: Var,
        inv_std: T,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normed: Vec<T>,
        inv_std: Vec<T>,
    },
    Sum(Var),
    Custom {
        inputs: Vec<Var>,
        backward: CustomBackward<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Recorded computation for one forward pass.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Result<Var> {
        value.ensure_finite("graph op output")?;
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Record a leaf. Gradients are produced for every leaf.
    pub fn leaf(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push(value, Op::Leaf)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, k: T) -> Result<Var> {
        let v = self.value(a).map(|x| x * k);
        self.push(v, Op::Scale(a, k))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        self.push(v, Op::MatMul(a, b))
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2()?;
        let (n, k2) = self.value(b).dims2()?;
        if k != k2 {
            return Err(shape_err!(
                "matmul_bt {:?} x {:?}ᵀ",
                self.shape(a),
                self.shape(b)
            ));
        }
        let mut out = vec![T::zero(); m * n];
        matmul_bt_acc(
            self.value(a).data(),
            self.value(b).data(),
            &mut out,
            m,
            k,
            n,
        );
        self.push(Tensor::new(vec![m, n], out)?, Op::MatMulBt(a, b))
    }

    /// `out[i] = src[index[i]]`, with [`ZERO_INDEX`] reading as zero.
    ///
    /// Covers patch partition and merge, transposes, im2col, cropping,
    /// resampling and broadcasting.
    pub fn gather(&mut self, src: Var, index: Arc<[u32]>, shape: &[usize]) -> Result<Var> {
        let data = self.value(src).data();
        let n = data.len();
        let mut out = Vec::with_capacity(index.len());
        for &i in index.iter() {
            if i == ZERO_INDEX {
                out.push(T::zero());
            } else if (i as usize) < n {
                out.push(data[i as usize]);
            } else {
                return Err(shape_err!("gather index {i} out of range for {n} elements"));
            }
        }
        let v = Tensor::new(shape.to_vec(), out)?;
        self.push(v, Op::Gather { src, index })
    }

    /// Flat concatenation; the result takes `shape`.
    pub fn concat(&mut self, parts: &[Var], shape: &[usize]) -> Result<Var> {
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        let v = Tensor::new(shape.to_vec(), out)?;
        self.push(v, Op::Concat(parts.to_vec()))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).reshape(shape)?;
        self.push(v, Op::Reshape(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| x.max(T::zero()));
        self.push(v, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let v = crate::tensor::softmax(self.value(a), axis)?;
        self.push(v, Op::Softmax { x: a, axis })
    }

    /// Normalization over all elements; identity for a single element.
    pub fn instance_norm(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.numel() == 1 {
            let v = x.clone();
            return self.push(v, Op::Reshape(a));
        }
        let (y, inv_std) = normalize_slice(x.data(), T::of(NORM_EPS));
        let v = Tensor::new(x.shape().to_vec(), y)?;
        self.push(v, Op::InstanceNorm { x: a, inv_std })
    }

    /// Normalization over the last axis, then `gain * y + bias`.
    pub fn layer_norm(&mut self, a: Var, gain: Var, bias: Var) -> Result<Var> {
        let x = self.value(a);
        let width = *x.shape().last().expect("rank >= 1");
        let (g, b) = (self.value(gain), self.value(bias));
        if g.numel() != width || b.numel() != width {
            return Err(shape_err!(
                "layer norm width {width} vs gain {:?} bias {:?}",
                g.shape(),
                b.shape()
            ));
        }
        let eps = T::of(NORM_EPS);
        let mut normed = Vec::with_capacity(x.numel());
        let mut inv_std = Vec::with_capacity(x.numel() / width);
        for row in x.data().chunks(width) {
            let (y, s) = normalize_slice(row, eps);
            normed.extend(y);
            inv_std.push(s);
        }
        let out: Vec<T> = normed
            .iter()
            .enumerate()
            .map(|(i, &y)| g.data()[i % width] * y + b.data()[i % width])
            .collect();
        let v = Tensor::new(x.shape().to_vec(), out)?;
        self.push(
            v,
            Op::LayerNorm {
                x: a,
                gain,
                bias,
                normed,
                inv_std,
            },
        )
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = T::of(self.value(a).numel() as f64);
        let s = self.sum(a)?;
        self.scale(s, T::one() / n)
    }

    /// Record a fused operation whose forward value was computed by the caller.
    pub fn custom(
        &mut self,
        inputs: &[Var],
        value: Tensor<T>,
        backward: CustomBackward<T>,
    ) -> Result<Var> {
        self.push(
            value,
            Op::Custom {
                inputs: inputs.to_vec(),
                backward,
            },
        )
    }

    /// Reverse pass from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>> {
        if self.value(output).numel() != 1 {
            return Err(shape_err!(
                "backward from non-scalar of shape {:?}",
                self.shape(output)
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::filled(self.shape(output), T::one()));
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(
        &self,
        node: &Node<T>,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                accumulate(grads, *a, g.zip_map(val(*b), |x, y| x * y)?);
                accumulate(grads, *b, g.zip_map(val(*a), |x, y| x * y)?);
            }
            Op::Scale(a, k) => {
                let k = *k;
                accumulate(grads, *a, g.map(|x| x * k));
            }
            Op::MatMul(a, b) => {
                let (m, k) = val(*a).dims2()?;
                let n = val(*b).dims2()?.1;
                let mut ga = vec![T::zero(); m * k];
                matmul_bt_acc(g.data(), val(*b).data(), &mut ga, m, n, k);
                let mut gb = vec![T::zero(); k * n];
                matmul_at_acc(val(*a).data(), g.data(), &mut gb, m, k, n);
                accumulate(grads, *a, Tensor::new(vec![m, k], ga)?);
                accumulate(grads, *b, Tensor::new(vec![k, n], gb)?);
            }
            Op::MatMulBt(a, b) => {
                // out = a bᵀ; da = g b; db = gᵀ a
                let (m, k) = val(*a).dims2()?;
                let n = val(*b).dims2()?.0;
                let mut ga = vec![T::zero(); m * k];
                matmul_acc(g.data(), val(*b).data(), &mut ga, m, n, k);
                let mut gb = vec![T::zero(); n * k];
                matmul_at_acc(g.data(), val(*a).data(), &mut gb, m, n, k);
                accumulate(grads, *a, Tensor::new(vec![m, k], ga)?);
                accumulate(grads, *b, Tensor::new(vec![n, k], gb)?);
            }
            Op::Gather { src, index } => {
                let s = val(*src);
                let mut gs = vec![T::zero(); s.numel()];
                for (&i, &gv) in index.iter().zip(g.data()) {
                    if i != ZERO_INDEX {
                        gs[i as usize] += gv;
                    }
                }
                accumulate(grads, *src, Tensor::new(s.shape().to_vec(), gs)?);
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pv = val(p);
                    let n = pv.numel();
                    let piece = g.data()[offset..offset + n].to_vec();
                    accumulate(grads, p, Tensor::new(pv.shape().to_vec(), piece)?);
                    offset += n;
                }
            }
            Op::Reshape(a) => {
                accumulate(grads, *a, g.reshape(val(*a).shape())?);
            }
            Op::Relu(a) => {
                accumulate(
                    grads,
                    *a,
                    g.zip_map(val(*a), |gv, x| if x > T::zero() { gv } else { T::zero() })?,
                );
            }
            Op::Sigmoid(a) => {
                accumulate(
                    grads,
                    *a,
                    g.zip_map(&node.value, |gv, y| gv * y * (T::one() - y))?,
                );
            }
            Op::Softmax { x, axis } => {
                let y = &node.value;
                let (outer, len, inner) = y.axis_split(*axis)?;
                let mut gx = vec![T::zero(); y.numel()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |a: usize| (o * len + a) * inner + i;
                        let dot: T = (0..len).map(|a| g.data()[idx(a)] * y.data()[idx(a)]).sum();
                        for a in 0..len {
                            gx[idx(a)] = y.data()[idx(a)] * (g.data()[idx(a)] - dot);
                        }
                    }
                }
                accumulate(grads, *x, Tensor::new(y.shape().to_vec(), gx)?);
            }
            Op::InstanceNorm { x, inv_std } => {
                let gx = normalize_backward(g.data(), node.value.data(), *inv_std);
                accumulate(grads, *x, Tensor::new(node.value.shape().to_vec(), gx)?);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            } => {
                let gv = val(*gain);
                let width = gv.numel();
                let mut ggain = vec![T::zero(); width];
                let mut gbias = vec![T::zero(); width];
                let mut gx = Vec::with_capacity(normed.len());
                for (r, (grow, yrow)) in
                    g.data().chunks(width).zip(normed.chunks(width)).enumerate()
                {
                    let mut gy = Vec::with_capacity(width);
                    for j in 0..width {
                        ggain[j] += grow[j] * yrow[j];
                        gbias[j] += grow[j];
                        gy.push(grow[j] * gv.data()[j]);
                    }
                    gx.extend(normalize_backward(&gy, yrow, inv_std[r]));
                }
                accumulate(grads, *x, Tensor::new(node.value.shape().to_vec(), gx)?);
                accumulate(grads, *gain, Tensor::new(gv.shape().to_vec(), ggain)?);
                accumulate(
                    grads,
                    *bias,
                    Tensor::new(val(*bias).shape().to_vec(), gbias)?,
                );
            }
            Op::Sum(a) => {
                let gv = g.item();
                accumulate(grads, *a, Tensor::filled(val(*a).shape(), gv));
            }
            Op::Custom { inputs, backward } => {
                let values: Vec<&Tensor<T>> = inputs.iter().map(|&v| val(v)).collect();
                for (&v, gi) in inputs.iter().zip(backward(g, &values)) {
                    if let Some(gi) = gi {
                        if gi.shape() != val(v).shape() {
                            return Err(shape_err!(
                                "custom backward gradient shape {:?} vs {:?}",
                                gi.shape(),
                                val(v).shape()
                            ));
                        }
                        accumulate(grads, v, gi);
                    }
                }
            }
        }
        Ok(())
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.data_mut().iter_mut().zip(g.data()) {
                *e += *x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

/// Gradient of `y = (x - mean) * inv_std` with respect to `x`.
fn normalize_backward<T: Scalar>(gy: &[T], y: &[T], inv_std: T) -> Vec<T> {
    let n = T::of(gy.len() as f64);
    let mean_g = gy.iter().copied().sum::<T>() / n;
    let mean_gy = gy.iter().zip(y).map(|(&a, &b)| a * b).sum::<T>() / n;
    gy.iter()
        .zip(y)
        .map(|(&g, &yv)| inv_std * (g - mean_g - yv * mean_gy))
        .collect()
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Gradients from one backward pass, addressed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros of `shape` when the output did not depend on it.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}
