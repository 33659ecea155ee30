//! Central-difference verification of tape gradients.

use super::{Tape, Tensor, TensorError, TensorId};
use crate::rng::SplitMix64;

/// Error from the program under check or the check itself.
pub type CheckError = Box<dyn std::error::Error>;

/// A differentiable program: builds a scalar loss on the tape from
/// registered leaves. Must be deterministic and pure.
pub type Program = dyn Fn(&mut Tape<f64>, &[TensorId]) -> Result<TensorId, CheckError>;

fn eval_loss(f: &Program, params: &[Tensor<f64>]) -> Result<f64, CheckError> {
    let mut tape = Tape::new();
    let ids: Vec<TensorId> = params
        .iter()
        .map(|p| {
            let mut t = p.clone();
            t.set_requires_grad(false);
            tape.leaf(t)
        })
        .collect();
    let loss = f(&mut tape, &ids)?;
    let v = tape.scalar_value(loss)?;
    if !v.is_finite() {
        return Err(Box::new(TensorError::NonFinite {
            what: "loss at perturbed point".to_string(),
        }));
    }
    Ok(v)
}

fn analytic_grads(f: &Program, params: &[Tensor<f64>]) -> Result<Vec<Vec<f64>>, CheckError> {
    let mut tape = Tape::new();
    let ids: Vec<TensorId> = params
        .iter()
        .map(|p| {
            let mut t = p.clone();
            t.set_requires_grad(true);
            tape.leaf(t)
        })
        .collect();
    let loss = f(&mut tape, &ids)?;
    tape.backward(loss)?;
    Ok(ids
        .iter()
        .map(|&id| tape.grad(id).expect("leaf gradient").to_vec())
        .collect())
}

fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// Compares the tape gradient of `f` against central differences over every
/// coordinate of `params`, returning the maximum relative error.
pub fn grad_check(f: &Program, params: &[Tensor<f64>], h: f64) -> Result<f64, CheckError> {
    check_coords(f, params, h, None, 0)
}

/// Like [`grad_check`] but verifies at most `per_tensor` seeded-random
/// coordinates of each parameter, for programs too large to sweep fully.
pub fn grad_check_sampled(
    f: &Program,
    params: &[Tensor<f64>],
    h: f64,
    per_tensor: usize,
    seed: u64,
) -> Result<f64, CheckError> {
    check_coords(f, params, h, Some(per_tensor), seed)
}

fn check_coords(
    f: &Program,
    params: &[Tensor<f64>],
    h: f64,
    per_tensor: Option<usize>,
    seed: u64,
) -> Result<f64, CheckError> {
    let grads = analytic_grads(f, params)?;
    let mut work: Vec<Tensor<f64>> = params.to_vec();
    let mut rng = SplitMix64::new(seed);
    let mut max_err = 0.0f64;
    for (pi, grad) in grads.iter().enumerate() {
        let numel = work[pi].numel();
        let coords: Vec<usize> = match per_tensor {
            Some(limit) if numel > limit => (0..limit).map(|_| rng.below(numel)).collect(),
            _ => (0..numel).collect(),
        };
        for j in coords {
            let orig = work[pi].data()[j];
            work[pi].data_mut()[j] = orig + h;
            let plus = eval_loss(f, &work)?;
            work[pi].data_mut()[j] = orig - h;
            let minus = eval_loss(f, &work)?;
            work[pi].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(grad[j], numeric);
            if err > max_err {
                max_err = err;
            }
        }
    }
    Ok(max_err)
}
