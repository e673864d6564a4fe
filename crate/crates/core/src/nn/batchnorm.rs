use super::{NnError, Result};
use crate::numcore::Tensor;
use serde::{Deserialize, Serialize};

pub const DEFAULT_MOMENTUM: f64 = 0.99;
pub const DEFAULT_EPS: f64 = 1e-3;

/// Per-feature batch normalization over `[n×d]` inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNormLayer {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f64,
    pub eps: f64,
}

/// Batch mean and (biased) variance from a training-mode forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BatchNormCache {
    xhat: Tensor,
    inv_std: Vec<f64>,
    /// Batch statistics were used (training mode); otherwise running stats.
    batch_mode: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormGrads {
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl BatchNormLayer {
    pub fn new(dim: usize) -> Self {
        BatchNormLayer {
            gamma: Tensor::filled(&[dim], 1.0),
            beta: Tensor::zeros(&[dim]),
            running_mean: Tensor::zeros(&[dim]),
            running_var: Tensor::filled(&[dim], 1.0),
            momentum: DEFAULT_MOMENTUM,
            eps: DEFAULT_EPS,
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    /// Forward without touching running statistics. In training mode the
    /// batch statistics are returned so the caller can fold them in with
    /// [`BatchNormLayer::update_running`].
    pub fn forward_pure(
        &self,
        x: &Tensor,
        training: bool,
    ) -> Result<(Tensor, BatchNormCache, Option<BatchStats>)> {
        let d = self.dim();
        if x.shape().len() != 2 || x.cols() != d {
            return Err(crate::numcore::NumError::Shape {
                op: "batchnorm",
                left: x.shape().to_vec(),
                right: vec![d],
            }
            .into());
        }
        let n = x.rows();
        let (mean, var, stats) = if training {
            if n < 2 {
                return Err(NnError::BatchTooSmall(n));
            }
            let mut mean = vec![0.0; d];
            for row in x.data().chunks(d) {
                for (m, v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= n as f64);
            let mut var = vec![0.0; d];
            for row in x.data().chunks(d) {
                for k in 0..d {
                    let c = row[k] - mean[k];
                    var[k] += c * c;
                }
            }
            var.iter_mut().for_each(|v| *v /= n as f64);
            (
                mean.clone(),
                var.clone(),
                Some(BatchStats { mean, var }),
            )
        } else {
            (
                self.running_mean.data().to_vec(),
                self.running_var.data().to_vec(),
                None,
            )
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut xhat = x.clone();
        let mut y = x.clone();
        for (xr, yr) in xhat.data_mut().chunks_mut(d).zip(y.data_mut().chunks_mut(d)) {
            for k in 0..d {
                xr[k] = (xr[k] - mean[k]) * inv_std[k];
                yr[k] = self.gamma.data()[k] * xr[k] + self.beta.data()[k];
            }
        }
        Ok((
            y,
            BatchNormCache {
                xhat,
                inv_std,
                batch_mode: training,
            },
            stats,
        ))
    }

    /// Forward that also folds batch statistics into the running averages
    /// when `training` is set.
    pub fn forward(&mut self, x: &Tensor, training: bool) -> Result<(Tensor, BatchNormCache)> {
        let (y, cache, stats) = self.forward_pure(x, training)?;
        if let Some(stats) = stats {
            self.update_running(&stats);
        }
        Ok((y, cache))
    }

    /// `running = momentum · running + (1 − momentum) · batch`.
    pub fn update_running(&mut self, stats: &BatchStats) {
        let m = self.momentum;
        for (r, b) in self.running_mean.data_mut().iter_mut().zip(&stats.mean) {
            *r = m * *r + (1.0 - m) * b;
        }
        for (r, b) in self.running_var.data_mut().iter_mut().zip(&stats.var) {
            *r = m * *r + (1.0 - m) * b;
        }
    }

    pub fn backward(&self, cache: &BatchNormCache, dy: &Tensor) -> Result<(BatchNormGrads, Tensor)> {
        let d = self.dim();
        if dy.shape() != cache.xhat.shape() {
            return Err(NnError::StaleCache(format!(
                "batchnorm cache {:?} vs dy {:?}",
                cache.xhat.shape(),
                dy.shape()
            )));
        }
        let n = dy.rows() as f64;
        let mut dgamma = vec![0.0; d];
        let mut dbeta = vec![0.0; d];
        for (dr, xr) in dy.data().chunks(d).zip(cache.xhat.data().chunks(d)) {
            for k in 0..d {
                dbeta[k] += dr[k];
                dgamma[k] += dr[k] * xr[k];
            }
        }
        let gamma = self.gamma.data();
        let mut dx = dy.clone();
        for (dxr, xr) in dx.data_mut().chunks_mut(d).zip(cache.xhat.data().chunks(d)) {
            for k in 0..d {
                let g = gamma[k] * cache.inv_std[k];
                dxr[k] = if cache.batch_mode {
                    // Σ dxhat = γ·dβ, Σ dxhat·xhat = γ·dγ
                    g * (dxr[k] - dbeta[k] / n - xr[k] * dgamma[k] / n)
                } else {
                    g * dxr[k]
                };
            }
        }
        Ok((
            BatchNormGrads {
                gamma: Tensor::vector(dgamma),
                beta: Tensor::vector(dbeta),
            },
            dx,
        ))
    }
}
