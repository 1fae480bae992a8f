use serde::{Deserialize, Serialize};

use super::{s, ParamSet, Scalar};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid Adam settings {self:?}")))
        }
    }
}

/// One bias-corrected Adam update from each parameter's accumulated
/// gradient, which is then cleared. Frozen parameters are left untouched.
pub fn adam_step<S: Scalar>(params: &mut ParamSet<S>, cfg: &AdamConfig) {
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    for p in params.iter_mut().filter(|p| !p.frozen) {
        p.step_count += 1;
        let t = p.step_count as i32;
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        let values = p.value.data_mut();
        for i in 0..values.len() {
            let g = p.accumulated_grad[i].to_f64_lossy();
            let m = b1 * p.adam_m[i].to_f64_lossy() + (1.0 - b1) * g;
            let v = b2 * p.adam_v[i].to_f64_lossy() + (1.0 - b2) * g * g;
            p.adam_m[i] = s(m);
            p.adam_v[i] = s(v);
            let update = cfg.learning_rate * (m / bc1) / ((v / bc2).sqrt() + cfg.epsilon);
            values[i] = values[i] - s(update);
        }
        p.clear_grad();
    }
}
