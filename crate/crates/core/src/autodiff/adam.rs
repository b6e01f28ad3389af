use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::{Error, Real, Result};

/// Moment estimates for a fixed, ordered list of parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub beta1: Real,
    pub beta2: Real,
    pub epsilon: Real,
    step: u64,
    first: Vec<Vec<Real>>,
    second: Vec<Vec<Real>>,
}

impl AdamState {
    /// Zeroed moments shaped like `params`, with the usual constants
    /// (0.9, 0.999, 1e-8).
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        Self::with_constants(params, 0.9, 0.999, 1e-8)
    }

    pub fn with_constants<'a>(
        params: impl IntoIterator<Item = &'a Tensor>,
        beta1: Real,
        beta2: Real,
        epsilon: Real,
    ) -> Self {
        let first: Vec<Vec<Real>> = params.into_iter().map(|p| vec![0.0; p.len()]).collect();
        let second = first.clone();
        AdamState {
            beta1,
            beta2,
            epsilon,
            step: 0,
            first,
            second,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn num_params(&self) -> usize {
        self.first.len()
    }
}

/// One bias-corrected Adam update applied in place.
///
/// `params` and `grads` are matched by position and must agree with the
/// layout the state was created for.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[&Tensor],
    state: &mut AdamState,
    lr: Real,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first.len() {
        return Err(Error::shape(format!(
            "adam got {} params, {} grads, state for {}",
            params.len(),
            grads.len(),
            state.first.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.len() != state.first[i].len() {
            return Err(Error::shape(format!(
                "adam param {i}: {:?} vs grad {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);

    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = &mut state.first[i];
        let v = &mut state.second[i];
        for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[j] = b1 * m[j] + (1.0 - b1) * gj;
            v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
