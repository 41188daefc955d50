//! Adam with bias correction and a step-decay learning-rate schedule.
//!
//! Moment buffers are stored in f32 (they travel through checkpoints in the
//! same 32-bit layout as parameters) while the per-step arithmetic runs in
//! f64, so a scalar f64 oracle reproduces the update to high precision.

use std::collections::BTreeMap;

use super::ParamStore;
use crate::error::{Error, Result};
#[cfg(test)]
use super::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub base_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Multiply the rate by `decay_factor` every `decay_every` steps.
    pub decay_every: u64,
    pub decay_factor: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            base_lr: 0.0003,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay_every: 50_000,
            decay_factor: 0.7,
        }
    }
}

/// `base_lr * decay_factor^floor(step / decay_every)`.
pub fn lr_schedule(config: &AdamConfig, step: u64) -> f64 {
    config.base_lr * config.decay_factor.powi((step / config.decay_every) as i32)
}

/// Per-parameter first/second moment buffers plus the step counter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub first: BTreeMap<String, Vec<f32>>,
    pub second: BTreeMap<String, Vec<f32>>,
    pub step: u64,
}

impl AdamState {
    pub fn new() -> Self {
        AdamState::default()
    }
}

/// One Adam update over every parameter. Gradients must carry the same names
/// and shapes as the parameters; missing moment buffers are created at zero.
pub fn adam_step(
    params: &mut ParamStore<f32>,
    grads: &ParamStore<f32>,
    state: &mut AdamState,
    config: &AdamConfig,
) -> Result<()> {
    let lr = lr_schedule(config, state.step);
    let t = (state.step + 1) as i32;
    let bias1 = 1.0 - config.beta1.powi(t);
    let bias2 = 1.0 - config.beta2.powi(t);

    for (name, param) in params.iter_mut() {
        let grad = grads
            .get(name)
            .ok_or_else(|| Error::invalid(format!("missing gradient for `{name}`")))?;
        if grad.shape() != param.shape() {
            return Err(Error::invalid(format!(
                "gradient shape {:?} != parameter shape {:?} for `{name}`",
                grad.shape(),
                param.shape()
            )));
        }
        if let Some(bad) = grad.data().iter().find(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                step: state.step,
                detail: format!("non-finite gradient {bad} for `{name}`"),
            });
        }
        let m = state
            .first
            .entry(name.to_string())
            .or_insert_with(|| vec![0.0; param.numel()]);
        let v = state
            .second
            .entry(name.to_string())
            .or_insert_with(|| vec![0.0; param.numel()]);
        for ((p, g), (m, v)) in param
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(m.iter_mut().zip(v.iter_mut()))
        {
            let g = *g as f64;
            let m_new = config.beta1 * (*m as f64) + (1.0 - config.beta1) * g;
            let v_new = config.beta2 * (*v as f64) + (1.0 - config.beta2) * g * g;
            *m = m_new as f32;
            *v = v_new as f32;
            let m_hat = m_new / bias1;
            let v_hat = v_new / bias2;
            *p = (*p as f64 - lr * m_hat / (v_hat.sqrt() + config.eps)) as f32;
        }
    }
    state.step += 1;
    Ok(())
}
