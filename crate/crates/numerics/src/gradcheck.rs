//! Central finite-difference checks against [`Graph::backward`].
//!
//! The numerical side only ever evaluates forward passes, so it stays
//! independent of the backward rules it is used to verify.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::{Real, Tensor};

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or the plain difference norm when both are
/// below `floor`.
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(floor)
}

/// Fixed, non-uniform projection weights so a non-scalar output reduces to a
/// scalar whose gradient exercises every output element differently.
pub fn projection_weights<T: Real>(n: usize) -> Vec<T> {
    (0..n)
        .map(|i| T::from_f64_lossy(0.5 + ((i as f64 + 1.0) * 0.7548776662).fract()))
        .collect()
}

/// Central-difference derivative of `loss` with respect to selected
/// coordinates of `inputs[which]`.
pub fn numerical_gradient<T: Real>(
    loss: &mut dyn FnMut(&[Tensor<T>]) -> Result<f64>,
    inputs: &[Tensor<T>],
    which: usize,
    coords: &[usize],
    h: f64,
) -> Result<Vec<f64>> {
    let mut work = inputs.to_vec();
    let mut out = Vec::with_capacity(coords.len());
    for &c in coords {
        let orig = work[which].data()[c];
        work[which].data_mut()[c] = T::from_f64_lossy(orig.to_f64_lossy() + h);
        let up = loss(&work)?;
        work[which].data_mut()[c] = T::from_f64_lossy(orig.to_f64_lossy() - h);
        let down = loss(&work)?;
        work[which].data_mut()[c] = orig;
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

/// Compares analytic and numerical gradients of `build` for every input.
///
/// `build` maps recorded inputs to an output of any shape; the output is
/// projected onto [`projection_weights`] to form the scalar loss. Returns
/// the relative error per input.
pub fn check<T: Real>(
    build: &dyn Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
    inputs: &[Tensor<T>],
    h: f64,
) -> Result<Vec<f64>> {
    let scalar_loss = |g: &mut Graph<T>, vars: &[Var]| -> Result<Var> {
        let out = build(g, vars)?;
        let w = projection_weights::<T>(g.value(out).numel());
        let shape = g.shape(out).to_vec();
        let w = g.leaf(Tensor::new(shape, w)?)?;
        let prod = g.mul(out, w)?;
        g.sum(prod)
    };

    let mut g = Graph::new();
    let vars = inputs
        .iter()
        .map(|t| g.leaf(t.clone().with_requires_grad(true)))
        .collect::<Result<Vec<_>>>()?;
    let loss = scalar_loss(&mut g, &vars)?;
    let grads = g.backward(loss)?;

    let mut eval = |ts: &[Tensor<T>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars = ts.iter().map(|t| g.leaf(t.clone())).collect::<Result<Vec<_>>>()?;
        let loss = scalar_loss(&mut g, &vars)?;
        Ok(g.value(loss).data()[0].to_f64_lossy())
    };

    let mut errors = Vec::with_capacity(inputs.len());
    for (i, v) in vars.iter().enumerate() {
        let coords: Vec<usize> = (0..inputs[i].numel()).collect();
        let numeric = numerical_gradient(&mut eval, inputs, i, &coords, h)?;
        let analytic: Vec<f64> = grads.of(*v).iter().map(|x| x.to_f64_lossy()).collect();
        errors.push(relative_error(&analytic, &numeric, 1e-12));
    }
    Ok(errors)
}
