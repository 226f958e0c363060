//! Adam with bias correction.

use std::collections::BTreeMap;

use crate::error::{invalid, shape_err, Result};
use crate::model::ParameterSet;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid!("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(invalid!("adam betas must lie in [0, 1)"));
        }
        if !(self.eps > 0.0) {
            return Err(invalid!("adam eps must be positive"));
        }
        Ok(())
    }
}

/// One update of `param` in place. `t` is the 1-based step count.
///
/// `m <- b1 m + (1 - b1) g`, `v <- b2 v + (1 - b2) g^2`, then
/// `param -= lr * m_hat / (sqrt(v_hat) + eps)` with `m_hat = m / (1 - b1^t)`
/// and `v_hat = v / (1 - b2^t)`.
pub fn adam_step(param: &mut [f32], grad: &[f32], m: &mut [f32], v: &mut [f32], cfg: &AdamConfig, t: u64) -> Result<()> {
    if t == 0 {
        return Err(invalid!("adam step count starts at 1"));
    }
    let n = param.len();
    if grad.len() != n || m.len() != n || v.len() != n {
        return Err(shape_err!("adam buffers disagree in length"));
    }
    let c1 = 1.0 - cfg.beta1.powf(t as f64);
    let c2 = 1.0 - cfg.beta2.powf(t as f64);
    let (b1, b2) = (cfg.beta1 as f32, cfg.beta2 as f32);
    for i in 0..n {
        let g = grad[i];
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
        let m_hat = m[i] as f64 / c1;
        let v_hat = v[i] as f64 / c2;
        param[i] -= (cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps)) as f32;
    }
    Ok(())
}

/// Moment buffers for every trainable tensor of a parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    moments: BTreeMap<String, (Vec<f32>, Vec<f32>)>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Adam {
            config,
            step: 0,
            moments: BTreeMap::new(),
        })
    }

    /// Applies one step to every tensor named in `grads`. Names missing from
    /// `grads` keep their values and moments.
    pub fn update(&mut self, params: &mut ParameterSet<f32>, grads: &BTreeMap<String, Vec<f32>>) -> Result<()> {
        self.step += 1;
        for (name, g) in grads {
            if ParameterSet::<f32>::is_buffer(name) {
                return Err(invalid!("{name} is not trainable"));
            }
            let p = params.get_mut(name).ok_or_else(|| invalid!("gradient for unknown parameter {name}"))?;
            let n = p.numel();
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            adam_step(p.data_mut(), g, m, v, &self.config, self.step)?;
        }
        Ok(())
    }
}
