//! Batch normalization over (N, H, W) per channel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub const DEFAULT_BN_EPS: f32 = 1e-5;
pub const DEFAULT_BN_MOMENTUM: f32 = 0.1;

/// Affine parameters and running statistics of one batch-norm layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNormState<T = f32> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: T,
    pub eps: T,
}

impl<T: Element> BatchNormState<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: T::of_f32(DEFAULT_BN_MOMENTUM),
            eps: T::of_f32(DEFAULT_BN_EPS),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Normalizes `input`; in training mode the running statistics are
    /// updated with the batch mean and unbiased batch variance.
    pub fn forward(&mut self, input: &Tensor<T>, training: bool) -> Result<Tensor<T>> {
        let (out, cache) = batch_norm_forward(
            input,
            &self.gamma,
            &self.beta,
            &self.running_mean,
            &self.running_var,
            self.eps,
            training,
        )?;
        if let Some((mean, var)) = cache.batch_stats {
            update_running(&mut self.running_mean, &mean, self.momentum);
            update_running(&mut self.running_var, &var, self.momentum);
        }
        Ok(out)
    }
}

pub(crate) fn update_running<T: Element>(running: &mut [T], batch: &[T], momentum: T) {
    for (r, &b) in running.iter_mut().zip(batch) {
        *r = (T::one() - momentum) * *r + momentum * b;
    }
}

/// Values saved by the forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct BnCache<T: Element> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
    pub training: bool,
    /// Batch mean and unbiased variance (training mode only).
    pub batch_stats: Option<(Vec<T>, Vec<T>)>,
}

pub fn batch_norm_forward<T: Element>(
    input: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    running_mean: &[T],
    running_var: &[T],
    eps: T,
    training: bool,
) -> Result<(Tensor<T>, BnCache<T>)> {
    let s = input.shape();
    let c = s.c;
    if s.n == 0 || s.plane() == 0 {
        return Err(Error::EmptyBatch);
    }
    if [gamma.len(), beta.len(), running_mean.len(), running_var.len()]
        .iter()
        .any(|&l| l != c)
    {
        return Err(Error::InvalidShape(format!(
            "batch-norm over {c} channels given parameter vectors of length {}",
            gamma.len()
        )));
    }
    let plane = s.plane();
    let count = s.n * plane;
    let x = input.data();
    let mut xhat = vec![T::zero(); x.len()];
    let mut out = Tensor::zeros(s);
    let mut inv_std = vec![T::zero(); c];
    let mut batch_stats = training.then(|| (vec![T::zero(); c], vec![T::zero(); c]));
    for ch in 0..c {
        let (mean, var) = if training {
            let mut sum = 0.0f64;
            for n in 0..s.n {
                let base = (n * c + ch) * plane;
                sum += x[base..base + plane].iter().map(|v| v.as_f64()).sum::<f64>();
            }
            let mean = sum / count as f64;
            let mut sq = 0.0f64;
            for n in 0..s.n {
                let base = (n * c + ch) * plane;
                sq += x[base..base + plane]
                    .iter()
                    .map(|v| (v.as_f64() - mean).powi(2))
                    .sum::<f64>();
            }
            let var = sq / count as f64;
            if let Some((m, v)) = batch_stats.as_mut() {
                m[ch] = T::of_f64(mean);
                let unbiased = if count > 1 {
                    var * count as f64 / (count - 1) as f64
                } else {
                    var
                };
                v[ch] = T::of_f64(unbiased);
            }
            (T::of_f64(mean), T::of_f64(var))
        } else {
            (running_mean[ch], running_var[ch])
        };
        let istd = T::one() / (var + eps).sqrt();
        inv_std[ch] = istd;
        let o = out.data_mut();
        for n in 0..s.n {
            let base = (n * c + ch) * plane;
            for i in base..base + plane {
                let h = (x[i] - mean) * istd;
                xhat[i] = h;
                o[i] = gamma[ch] * h + beta[ch];
            }
        }
    }
    Ok((
        out,
        BnCache {
            xhat,
            inv_std,
            training,
            batch_stats,
        },
    ))
}

/// Returns `(grad_input, grad_gamma, grad_beta)`.
pub fn batch_norm_backward<T: Element>(
    grad_out: &Tensor<T>,
    cache: &BnCache<T>,
    gamma: &[T],
) -> (Tensor<T>, Vec<T>, Vec<T>) {
    let s = grad_out.shape();
    let (c, plane) = (s.c, s.plane());
    let m = T::of_f64((s.n * plane) as f64);
    let dy = grad_out.data();
    let mut dx = Tensor::zeros(s);
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for ch in 0..c {
        let (mut sum_dy, mut sum_dy_xhat) = (T::zero(), T::zero());
        for n in 0..s.n {
            let base = (n * c + ch) * plane;
            for (&g, &xh) in dy[base..base + plane].iter().zip(&cache.xhat[base..base + plane]) {
                sum_dy += g;
                sum_dy_xhat += g * xh;
            }
        }
        dgamma[ch] = sum_dy_xhat;
        dbeta[ch] = sum_dy;
        let scale = gamma[ch] * cache.inv_std[ch];
        let d = dx.data_mut();
        for n in 0..s.n {
            let base = (n * c + ch) * plane;
            for i in base..base + plane {
                d[i] = if cache.training {
                    scale * (dy[i] - sum_dy / m - cache.xhat[i] * sum_dy_xhat / m)
                } else {
                    scale * dy[i]
                };
            }
        }
    }
    (dx, dgamma, dbeta)
}
