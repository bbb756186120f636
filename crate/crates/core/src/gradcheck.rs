//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn evaluate<T: Scalar, F>(f: &F, inputs: &[Tensor<T>]) -> Result<(Graph<T>, Vec<Var>, Var)>
where
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars = inputs
        .iter()
        .map(|t| g.leaf(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&mut g, &vars)?;
    let value = g.value(out);
    if value.numel() != 1 {
        return Err(Error::Shape(format!(
            "checked function must be scalar, got {:?}",
            value.shape()
        )));
    }
    if !value.item().is_finite() {
        return Err(Error::NumericDomain(
            "checked function returned a non-finite value".into(),
        ));
    }
    Ok((g, vars, out))
}

/// Max over coordinates of `|analytic - central| / max(1, |central|)` for a
/// scalar function of one tensor.
pub fn check_gradient<T: Scalar, F>(f: F, x: &Tensor<T>, step: T) -> Result<T>
where
    F: Fn(&mut Graph<T>, Var) -> Result<Var>,
{
    check_gradients(|g, vs| f(g, vs[0]), std::slice::from_ref(x), step, None)
}

/// Same as [`check_gradient`] for a function of several tensors.
///
/// With `sample_per_input = Some((k, seed))` only `k` coordinates of each
/// input, chosen deterministically from `seed`, are perturbed.
pub fn check_gradients<T: Scalar, F>(
    f: F,
    inputs: &[Tensor<T>],
    step: T,
    sample_per_input: Option<(usize, u64)>,
) -> Result<T>
where
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    let (g, vars, out) = evaluate(&f, inputs)?;
    let grads = g.backward(out)?;
    let analytic: Vec<Tensor<T>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.get_or_zeros(v, t.shape()))
        .collect();
    drop(g);

    let mut rng = sample_per_input.map(|(_, seed)| ChaCha8Rng::seed_from_u64(seed));
    let mut worst = T::zero();
    let mut perturbed = inputs.to_vec();
    for (which, input) in inputs.iter().enumerate() {
        let coords: Vec<usize> = match (sample_per_input, rng.as_mut()) {
            (Some((k, _)), Some(r)) if k < input.numel() => {
                let mut c = sample(r, input.numel(), k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..input.numel()).collect(),
        };
        for i in coords {
            let orig = input.data()[i];
            perturbed[which].data_mut()[i] = orig + step;
            let plus = eval_scalar(&f, &perturbed)?;
            perturbed[which].data_mut()[i] = orig - step;
            let minus = eval_scalar(&f, &perturbed)?;
            perturbed[which].data_mut()[i] = orig;
            let fd = (plus - minus) / (step + step);
            let err = (analytic[which].data()[i] - fd).abs() / fd.abs().max(T::one());
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

fn eval_scalar<T: Scalar, F>(f: &F, inputs: &[Tensor<T>]) -> Result<T>
where
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    let (g, _, out) = evaluate(f, inputs)?;
    Ok(g.value(out).item())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let x = Tensor::scalar(3.0f64);
        let err = check_gradient(|g, v| g.mul(v, v), &x, 1e-5).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn sum_of_softmax_has_zero_gradient() {
        let x = Tensor::from_vec(vec![0.3f64, -1.0, 2.0, 0.5]).unwrap();
        let mut g = Graph::new();
        let v = g.leaf(x.clone()).unwrap();
        let s = g.softmax(v, 0).unwrap();
        let out = g.sum(s).unwrap();
        let grads = g.backward(out).unwrap();
        for &d in grads.get(v).unwrap().data() {
            assert!(d.abs() < 1e-15);
        }
        let err = check_gradient(
            |g, v| {
                let s = g.softmax(v, 0)?;
                g.sum(s)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8);
    }

    #[test]
    fn non_finite_function_is_an_error() {
        let x = Tensor::scalar(1.0f64);
        let r = check_gradient(
            |g, v| {
                let big = g.leaf(Tensor::scalar(f64::INFINITY))?;
                g.mul(v, big)
            },
            &x,
            1e-5,
        );
        assert!(matches!(r, Err(Error::NumericDomain(_))));
    }
}
