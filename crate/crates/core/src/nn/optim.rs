use serde::{Deserialize, Serialize};

use crate::autodiff::BufferPool;
use crate::error::{usage_err, Result};
use crate::nn::params::ParameterSet;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Self::default()
        }
    }
}

/// Adam moment buffers, one pair per parameter in set order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ParameterSet, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        AdamState {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    fn congruent(&self, params: &ParameterSet) -> bool {
        self.first.len() == params.len()
            && self.second.len() == params.len()
            && params
                .iter()
                .zip(self.first.iter().zip(&self.second))
                .all(|((_, t), (m, v))| m.len() == t.numel() && v.len() == t.numel())
    }
}

/// One bias-corrected Adam update of every parameter. Gradients are
/// consumed (cleared) by the step.
pub fn adam_step(params: &mut ParameterSet, state: &mut AdamState) -> Result<()> {
    adam_step_recycling(params, state, &mut BufferPool::new())
}

/// [`adam_step`], handing the consumed gradient buffers to `pool`.
pub fn adam_step_recycling(params: &mut ParameterSet, state: &mut AdamState, pool: &mut BufferPool) -> Result<()> {
    if !state.congruent(params) {
        return Err(usage_err!("optimizer state does not match the parameter set"));
    }
    if let Some((name, _)) = params.iter().find(|(_, t)| t.grad().is_none()) {
        return Err(usage_err!("parameter {name:?} has no gradient"));
    }
    state.step += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    let t = state.step as i32;
    let correct1 = 1.0 - beta1.powi(t);
    let correct2 = 1.0 - beta2.powi(t);
    for ((_, tensor), (m, v)) in params
        .iter_mut()
        .zip(state.first.iter_mut().zip(state.second.iter_mut()))
    {
        let grad = tensor.take_grad().expect("checked above");
        for (((p, &g), mi), vi) in tensor
            .data_mut()
            .iter_mut()
            .zip(&grad)
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *mi = beta1 * *mi + (1.0 - beta1) * g;
            *vi = beta2 * *vi + (1.0 - beta2) * g * g;
            let m_hat = *mi / correct1;
            let v_hat = *vi / correct2;
            *p -= lr * m_hat / (v_hat.sqrt() + epsilon);
        }
        pool.recycle(grad);
    }
    Ok(())
}
