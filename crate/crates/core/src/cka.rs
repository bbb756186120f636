//! Linear centered kernel alignment between layer activations.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{matmul_at_acc, matmul_bt_acc, Tensor};

/// Column-centered copy of an `n × p` matrix.
fn centered<T: Scalar>(x: &Tensor<T>) -> Result<(usize, usize, Vec<T>)> {
    let (n, p) = x.dims2()?;
    if n < 2 {
        return Err(shape_err!("CKA needs at least 2 examples, got {n}"));
    }
    let mut data = x.data().to_vec();
    for j in 0..p {
        let mean = (0..n).map(|i| data[i * p + j]).sum::<T>() / T::of(n as f64);
        for i in 0..n {
            data[i * p + j] -= mean;
        }
    }
    let scale = x.data().iter().fold(T::zero(), |m, v| m.max(v.abs()));
    let spread = data.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    if spread <= scale * T::epsilon() * T::of(n as f64) {
        return Err(Error::Domain("activation matrix has zero variance".into()));
    }
    Ok((n, p, data))
}

fn frob_sq<T: Scalar>(v: &[T]) -> T {
    v.iter().map(|&x| x * x).sum()
}

/// `‖Y_cᵀ X_c‖² / (‖X_cᵀ X_c‖ · ‖Y_cᵀ Y_c‖)` with column-centered inputs.
pub fn linear_cka<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>) -> Result<T> {
    let (n, px, xc) = centered(x)?;
    let (m, py, yc) = centered(y)?;
    if n != m {
        return Err(shape_err!("example counts differ: {n} vs {m}"));
    }
    // Feature-space and example-space forms are equal; pick the smaller Gram.
    let (xy, xx, yy) = if px.max(py) <= n {
        let cross = |a: &[T], pa: usize, b: &[T], pb: usize| {
            let mut out = vec![T::zero(); pa * pb];
            matmul_at_acc(a, b, &mut out, n, pa, pb);
            frob_sq(&out)
        };
        (
            cross(&yc, py, &xc, px),
            cross(&xc, px, &xc, px).sqrt(),
            cross(&yc, py, &yc, py).sqrt(),
        )
    } else {
        let gram = |a: &[T], p: usize| {
            let mut out = vec![T::zero(); n * n];
            matmul_bt_acc(a, a, &mut out, n, p, n);
            out
        };
        let (kx, ky) = (gram(&xc, px), gram(&yc, py));
        let xy = kx.iter().zip(&ky).map(|(&a, &b)| a * b).sum::<T>();
        (xy, frob_sq(&kx).sqrt(), frob_sq(&ky).sqrt())
    };
    let v = xy / (xx * yy);
    if !v.is_finite() {
        return Err(Error::NumericDomain("CKA is not finite".into()));
    }
    Ok(v)
}

/// Layer × layer CKA values, row `i` for layer `i` of the first model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMap {
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl SimilarityMap {
    pub fn mean(&self) -> f64 {
        let n: usize = self.values.iter().map(Vec::len).sum();
        self.values.iter().flatten().sum::<f64>() / n.max(1) as f64
    }

    /// Grayscale raster, `cell` pixels per entry; brighter means more similar.
    pub fn write_pgm(&self, out: &mut impl Write, cell: usize) -> Result<()> {
        let (h, w) = (self.values.len() * cell, self.cols.len() * cell);
        write!(out, "P5\n{w} {h}\n255\n")?;
        let mut row = Vec::with_capacity(w);
        for r in &self.values {
            row.clear();
            for &v in r {
                let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
                row.extend(std::iter::repeat_n(g, cell));
            }
            for _ in 0..cell {
                out.write_all(&row)?;
            }
        }
        Ok(())
    }
}

/// CKA of every layer pair of two models over the same examples.
pub fn cka_similarity_map<T: Scalar>(
    a: &[(String, Tensor<T>)],
    b: &[(String, Tensor<T>)],
) -> Result<SimilarityMap> {
    let values = a
        .iter()
        .map(|(_, x)| {
            b.iter()
                .map(|(_, y)| linear_cka(x, y).map(|v| v.as_f64()))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SimilarityMap {
        rows: a.iter().map(|(n, _)| n.clone()).collect(),
        cols: b.iter().map(|(n, _)| n.clone()).collect(),
        values,
    })
}
