use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moment estimates, one buffer per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<S> {
    pub step: u64,
    pub m: Vec<Vec<S>>,
    pub v: Vec<Vec<S>>,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(params: &[(String, Tensor<S>)]) -> Self {
        let zeros = || params.iter().map(|(_, t)| vec![S::zero(); t.numel()]).collect();
        Self {
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

/// One bias-corrected Adam update.
///
/// Gradients are validated before anything is written, so a NaN leaves
/// both the parameters and the state untouched.
pub fn adam_step<S: Scalar>(
    params: &mut [(String, Tensor<S>)],
    grads: &[Vec<S>],
    state: &mut AdamState<S>,
    lr: S,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::Contract(format!(
            "{} params, {} gradients, {} moment buffers",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((name, t), g) in params.iter().zip(grads) {
        if g.len() != t.numel() {
            return Err(Error::shape(format!(
                "gradient for {name} has {} values, parameter has {}",
                g.len(),
                t.numel()
            )));
        }
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::Training(format!(
                "non-finite gradient {} in parameter {name} at element {i}",
                g[i]
            )));
        }
    }

    state.step += 1;
    let (b1, b2, eps) = (S::of(BETA1), S::of(BETA2), S::of(EPSILON));
    let step = i32::try_from(state.step).unwrap_or(i32::MAX);
    let c1 = S::one() - b1.powi(step);
    let c2 = S::one() - b2.powi(step);
    for (k, ((_, t), g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        for (i, p) in t.data_mut().iter_mut().enumerate() {
            m[i] = b1 * m[i] + (S::one() - b1) * g[i];
            v[i] = b2 * v[i] + (S::one() - b2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
