use alloc::collections::BTreeMap;
use alloc::string::String;

use serde::{Deserialize, Serialize};

use super::{Params, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment accumulators, lazily shaped after the parameters they track.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: BTreeMap<String, Tensor>,
    second: BTreeMap<String, Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update. Parameters without an entry in `grads`
/// are updated with a zero gradient.
pub fn adam_step(
    params: &mut Params,
    grads: &BTreeMap<String, Tensor>,
    state: &mut AdamState,
) -> Result<(), TensorError> {
    for (name, p) in params.iter() {
        if let Some(g) = grads.get(name) {
            if g.shape() != p.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "adam_step",
                    lhs: p.shape(),
                    rhs: g.shape(),
                });
            }
        }
    }
    state.step += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - libm::pow(beta1, t as f64);
    let c2 = 1.0 - libm::pow(beta2, t as f64);
    for (name, p) in params.iter_mut() {
        let (rows, cols) = p.shape();
        let m = state
            .first
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(rows, cols));
        let v = state
            .second
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(rows, cols));
        let g = grads.get(name);
        for i in 0..rows * cols {
            let gi = g.map_or(0.0, |g| g.data()[i]);
            let mi = beta1 * m.data()[i] + (1.0 - beta1) * gi;
            let vi = beta2 * v.data()[i] + (1.0 - beta2) * gi * gi;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            let update = lr * (mi / c1) / (libm::sqrt(vi / c2) + eps);
            p.data_mut()[i] -= update;
        }
    }
    Ok(())
}
