//! Dense row-major tensors and the forward kernels shared by the autograd graph.

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;

/// Epsilon added to the variance inside every normalization.
pub const NORM_EPS: f64 = 1e-5;

/// Dense n-dimensional array stored in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(shape_err!("extents must be positive, got {shape:?}"));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(shape_err!(
                "shape {shape:?} holds {numel} elements but data has {}",
                data.len()
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn from_vec(data: Vec<T>) -> Result<Self> {
        let n = data.len();
        Self::new(vec![n], data)
    }

    pub fn scalar(v: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, T::zero())
    }

    pub fn filled(shape: &[usize], v: T) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![v; n],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// Element-wise conversion to another scalar type.
    pub fn map_into<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data.clone())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(shape_err!(
                "elementwise op on {:?} and {:?}",
                self.shape,
                other.shape
            ));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NumericDomain(format!("{what}: non-finite value")))
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }

    /// Element at a multi-index.
    pub fn at(&self, index: &[usize]) -> T {
        debug_assert_eq!(index.len(), self.shape.len());
        let mut flat = 0;
        for (&i, &d) in index.iter().zip(&self.shape) {
            flat = flat * d + i;
        }
        self.data[flat]
    }

    /// Split the shape around `axis` into (outer, axis length, inner) extents.
    pub fn axis_split(&self, axis: usize) -> Result<(usize, usize, usize)> {
        if axis >= self.rank() {
            return Err(shape_err!(
                "axis {axis} out of range for rank {}",
                self.rank()
            ));
        }
        let outer = self.shape[..axis].iter().product();
        let inner = self.shape[axis + 1..].iter().product();
        Ok((outer, self.shape[axis], inner))
    }

    /// Rows × columns view of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(shape_err!("expected a matrix, got shape {:?}", self.shape)),
        }
    }

    pub fn transpose2(&self) -> Result<Self> {
        let (r, c) = self.dims2()?;
        let mut out = Vec::with_capacity(r * c);
        for j in 0..c {
            for i in 0..r {
                out.push(self.data[i * c + j]);
            }
        }
        Self::new(vec![c, r], out)
    }

    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        let (m, k) = self.dims2()?;
        let (k2, n) = rhs.dims2()?;
        if k != k2 {
            return Err(shape_err!("matmul {:?} x {:?}", self.shape, rhs.shape));
        }
        let mut out = vec![T::zero(); m * n];
        matmul_acc(&self.data, &rhs.data, &mut out, m, k, n);
        Self::new(vec![m, n], out)
    }
}

/// `out[m×n] += a[m×k] · b[k×n]`.
pub(crate) fn matmul_acc<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    assert!(a.len() >= m * k && b.len() >= k * n && out.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the assert covers every offset of the row-major operands.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            T::one(),
            out.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

/// `out[m×n] += a[m×k] · b[n×k]ᵀ`.
pub(crate) fn matmul_bt_acc<T: Scalar>(
    a: &[T],
    b: &[T],
    out: &mut [T],
    m: usize,
    k: usize,
    n: usize,
) {
    assert!(a.len() >= m * k && b.len() >= n * k && out.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: as above, with `b` read through transposed strides.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            1,
            k as isize,
            T::one(),
            out.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

/// `out[k×n] += a[m×k]ᵀ · b[m×n]`.
pub(crate) fn matmul_at_acc<T: Scalar>(
    a: &[T],
    b: &[T],
    out: &mut [T],
    m: usize,
    k: usize,
    n: usize,
) {
    assert!(a.len() >= m * k && b.len() >= m * n && out.len() >= k * n);
    if k == 0 || n == 0 {
        return;
    }
    // SAFETY: as above, with `a` read through transposed strides.
    unsafe {
        T::gemm(
            k,
            m,
            n,
            T::one(),
            a.as_ptr(),
            1,
            k as isize,
            b.as_ptr(),
            n as isize,
            1,
            T::one(),
            out.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

/// Numerically stabilized softmax along `axis`.
pub fn softmax<T: Scalar>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    x.ensure_finite("softmax input")?;
    let (outer, len, inner) = x.axis_split(axis)?;
    let mut out = x.data.clone();
    for o in 0..outer {
        for i in 0..inner {
            let idx = |a: usize| (o * len + a) * inner + i;
            let max = (0..len)
                .map(|a| x.data[idx(a)])
                .fold(T::neg_infinity(), T::max);
            let mut denom = T::zero();
            for a in 0..len {
                let e = (x.data[idx(a)] - max).exp();
                out[idx(a)] = e;
                denom += e;
            }
            for a in 0..len {
                out[idx(a)] /= denom;
            }
        }
    }
    Tensor::new(x.shape.clone(), out)
}

/// Zero-mean, unit-variance normalization over every element of `x`.
///
/// A single-element tensor is returned unchanged.
pub fn instance_normalize<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    x.ensure_finite("instance_normalize input")?;
    if x.numel() == 1 {
        return Ok(x.clone());
    }
    let (y, _) = normalize_slice(&x.data, T::of(NORM_EPS));
    Tensor::new(x.shape.clone(), y)
}

/// Per-row normalization over the last axis followed by `gain * y + bias`.
pub fn layer_normalize<T: Scalar>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    x.ensure_finite("layer_normalize input")?;
    let width = *x.shape.last().expect("tensors have rank >= 1");
    if gain.numel() != width || bias.numel() != width {
        return Err(shape_err!(
            "layer norm over width {width} with gain {:?} and bias {:?}",
            gain.shape,
            bias.shape
        ));
    }
    let eps = T::of(NORM_EPS);
    let mut out = Vec::with_capacity(x.numel());
    for row in x.data.chunks(width) {
        let (y, _) = normalize_slice(row, eps);
        out.extend(
            y.iter()
                .enumerate()
                .map(|(j, &v)| gain.data[j] * v + bias.data[j]),
        );
    }
    Tensor::new(x.shape.clone(), out)
}

/// Returns the normalized values and `1/sqrt(var + eps)`.
pub(crate) fn normalize_slice<T: Scalar>(x: &[T], eps: T) -> (Vec<T>, T) {
    let n = T::of(x.len() as f64);
    let mean = x.iter().copied().sum::<T>() / n;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    let inv_std = T::one() / (var + eps).sqrt();
    (x.iter().map(|&v| (v - mean) * inv_std).collect(), inv_std)
}

/// Robust regression penalty: quadratic below |x| = 1, linear above.
pub fn smooth_l1<T: Scalar>(x: T) -> Result<T> {
    if !x.is_finite() {
        return Err(Error::NumericDomain("smooth_l1 input is not finite".into()));
    }
    let a = x.abs();
    Ok(if a < T::one() {
        T::of(0.5) * x * x
    } else {
        a - T::of(0.5)
    })
}

/// Derivative of [`smooth_l1`].
pub(crate) fn smooth_l1_grad<T: Scalar>(x: T) -> T {
    if x.abs() < T::one() {
        x
    } else {
        x.signum()
    }
}
