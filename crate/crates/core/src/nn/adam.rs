use crate::numcore::Tensor;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

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
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m: Tensor,
    pub v: Tensor,
}

impl Moments {
    pub fn zeros_like(t: &Tensor) -> Self {
        Moments {
            m: Tensor::zeros(t.shape()),
            v: Tensor::zeros(t.shape()),
        }
    }
}

/// Bias-corrected Adam update of one tensor at step `t` (1-based).
pub fn adam_update(cfg: &AdamConfig, t: u64, moments: &mut Moments, param: &mut Tensor, grad: &Tensor) {
    assert_eq!(param.shape(), grad.shape(), "adam: param/grad shape mismatch");
    assert_eq!(param.shape(), moments.m.shape(), "adam: moment shape mismatch");
    let c1 = 1.0 - cfg.beta1.powi(t as i32);
    let c2 = 1.0 - cfg.beta2.powi(t as i32);
    let m = moments.m.data_mut();
    let v = moments.v.data_mut();
    for (k, (p, &g)) in param.data_mut().iter_mut().zip(grad.data()).enumerate() {
        m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g;
        v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[k] / c1;
        let v_hat = v[k] / c2;
        *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// Adam over a set of named parameters. Moments are created lazily the
/// first time a name receives a gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub t: u64,
    pub moments: BTreeMap<String, Moments>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            t: 0,
            moments: BTreeMap::new(),
        }
    }

    /// Advances the step counter once and updates every `(param, grad)` pair.
    pub fn step<'a>(&mut self, updates: impl IntoIterator<Item = (&'a str, &'a mut Tensor, &'a Tensor)>) {
        self.t += 1;
        for (name, param, grad) in updates {
            let moments = self
                .moments
                .entry(name.to_string())
                .or_insert_with(|| Moments::zeros_like(param));
            adam_update(&self.config, self.t, moments, param, grad);
        }
    }
}
