//! CKA identities on one random pair of activation matrices.

#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scm_core::cka::linear_cka;
use scm_core::tensor::Tensor;

use super::oracles;

fn gap(what: &str, a: f64, b: f64, tol: f64) -> Result<(), String> {
    if (a - b).abs() <= tol {
        Ok(())
    } else {
        Err(format!("{what}: {a} vs {b}"))
    }
}

/// Self-similarity (1e-10), scale and orthogonal invariance (1e-8) and the HSIC oracle (1e-9).
pub fn check(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(3..=12);
    let (p, q) = (rng.random_range(1..=8), rng.random_range(1..=16));
    let mut draw =
        |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.random_range(-2.0..2.0f64));
    let (x, y, m) = (draw(n, p), draw(n, q), draw(p, p));
    let s = 10f64.powf(rng.random_range(-1.0..1.0));
    let tensor = |a: &DMatrix<f64>| {
        Tensor::new(
            vec![a.nrows(), a.ncols()],
            a.transpose().as_slice().to_vec(),
        )
        .unwrap()
    };
    let rows = |a: &DMatrix<f64>| {
        (0..a.nrows())
            .map(|i| a.row(i).iter().copied().collect())
            .collect::<Vec<Vec<f64>>>()
    };
    let cka = |a: &DMatrix<f64>, b: &DMatrix<f64>| {
        linear_cka(&tensor(a), &tensor(b)).map_err(|e| format!("seed {seed}: {e}"))
    };

    gap(&format!("seed {seed} self"), cka(&x, &x)?, 1.0, 1e-10)?;
    let base = cka(&x, &y)?;
    gap(
        &format!("seed {seed} oracle"),
        base,
        oracles::cka_hsic(&rows(&x), &rows(&y)),
        1e-9,
    )?;
    gap(
        &format!("seed {seed} scale"),
        cka(&(&x * s), &y)?,
        base,
        1e-8,
    )?;
    let o = m.qr().q();
    gap(
        &format!("seed {seed} rotation"),
        cka(&(&x * o), &y)?,
        base,
        1e-8,
    )?;
    Ok(())
}
