//! Adam with bias correction.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Learning rate used when none is configured.
pub const DEFAULT_LR: f64 = 1.5e-5;

/// Optimizer state: hyperparameters, step counter and per-parameter moments.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Default for AdamState {
    fn default() -> Self {
        Self::new(DEFAULT_LR)
    }
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Number of updates applied so far.
    pub fn step(&self) -> u64 {
        self.step
    }
}

/// Applies one Adam update to `params` in place.
///
/// Moments are created on the first call and must keep matching the
/// parameter shapes afterwards. A non-finite gradient aborts the update
/// before anything is modified.
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Config(alloc::format!(
            "adam: {} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        p.expect_same_shape("adam gradient", g)?;
        if !g.is_finite() {
            return Err(Error::NonFinite("adam gradient"));
        }
    }
    if state.m.is_empty() {
        state.m = params.iter().map(Tensor::zeros_like).collect();
        state.v = params.iter().map(Tensor::zeros_like).collect();
    } else if state.m.len() != params.len() {
        return Err(Error::Config("adam: parameter list changed between steps".into()));
    }
    state.step += 1;
    let t = state.step as f64;
    let correction1 = 1.0 - libm::pow(state.beta1, t);
    let correction2 = 1.0 - libm::pow(state.beta2, t);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        p.expect_same_shape("adam moment", m)?;
        for (((pv, &gv), mv), vv) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mv = state.beta1 * *mv + (1.0 - state.beta1) * gv;
            *vv = state.beta2 * *vv + (1.0 - state.beta2) * gv * gv;
            let m_hat = *mv / correction1;
            let v_hat = *vv / correction2;
            *pv -= state.lr * m_hat / (libm::sqrt(v_hat) + state.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut params = [Tensor::new([2], alloc::vec![1.0, -2.0]).unwrap()];
        let grads = [Tensor::zeros([2]).unwrap()];
        let mut state = AdamState::new(0.1);
        adam_step(&mut params, &grads, &mut state).unwrap();
        assert_eq!(params[0].data(), &[1.0, -2.0]);
        assert_eq!(state.step(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut params = [Tensor::scalar(0.0)];
        let mut state = AdamState::new(0.1);
        adam_step(&mut params, &[Tensor::scalar(1.0)], &mut state).unwrap();
        // m̂ = 1, v̂ = 1: step = 0.1 / (1 + 1e-8)
        assert!((params[0].data()[0] + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn nan_gradient_is_an_error() {
        let mut params = [Tensor::scalar(0.0)];
        let mut state = AdamState::new(0.1);
        let err = adam_step(&mut params, &[Tensor::scalar(f64::NAN)], &mut state);
        assert_eq!(err, Err(Error::NonFinite("adam gradient")));
        assert_eq!(state.step(), 0);
    }

    #[test]
    fn default_learning_rate() {
        let s = AdamState::default();
        assert_eq!((s.lr, s.beta1, s.beta2, s.eps), (1.5e-5, 0.9, 0.999, 1e-8));
    }
}
