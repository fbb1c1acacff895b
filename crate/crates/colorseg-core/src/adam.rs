//! Adam with bias correction, one state per parameter tensor.

use alloc::vec;
use alloc::vec::Vec;

use crate::fmath;

/// Hyperparameters. The defaults are the standard β1=0.9, β2=0.999, ε=1e-8;
/// the learning rate is set by the caller.
#[derive(Clone, Copy, Debug)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamParams {
    pub fn with_lr(lr: f64) -> AdamParams {
        AdamParams {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates plus the step counter for one tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> AdamState {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One update: biased moments decay toward the gradient, bias-corrected
/// estimates drive the step `p -= lr * m_hat / (sqrt(v_hat) + eps)`.
///
/// Callers must pass matching lengths; that is a programming error, not a
/// runtime condition, so it panics.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, hp: &AdamParams) {
    assert_eq!(params.len(), grads.len(), "adam_step: gradient length");
    assert_eq!(params.len(), state.m.len(), "adam_step: state length");
    state.t += 1;
    let c1 = 1.0 - fmath::pow(hp.beta1, state.t as f64);
    let c2 = 1.0 - fmath::pow(hp.beta2, state.t as f64);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = hp.beta1 * state.m[i] + (1.0 - hp.beta1) * g;
        state.v[i] = hp.beta2 * state.v[i] + (1.0 - hp.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= hp.lr * m_hat / (fmath::sqrt(v_hat) + hp.eps);
    }
}
