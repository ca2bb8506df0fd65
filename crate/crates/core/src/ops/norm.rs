//! Batch normalization over the N, H and W axes of NCHW tensors.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_EPSILON: f32 = 1e-5;
pub const DEFAULT_MOMENTUM: f32 = 0.99;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are updated.
    Train,
    /// Running statistics; the op is a fixed per-channel affine map.
    Eval,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormParams {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub epsilon: f32,
    /// Weight of the old running value in each update.
    pub momentum: f32,
    /// False until the running statistics have been set, either explicitly
    /// or by a first training batch.
    pub initialized: bool,
}

impl BatchNormParams {
    /// Unit scale, zero shift, running statistics not yet observed.
    pub fn new(channels: usize) -> Self {
        BatchNormParams {
            gamma: Tensor::full(&[channels], 1.0),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], 1.0),
            epsilon: DEFAULT_EPSILON,
            momentum: DEFAULT_MOMENTUM,
            initialized: false,
        }
    }

    /// Parameters with explicit running statistics, ready for eval mode.
    pub fn with_running_stats(
        gamma: Tensor,
        beta: Tensor,
        running_mean: Tensor,
        running_var: Tensor,
        epsilon: f32,
    ) -> Result<Self> {
        let c = gamma.len();
        for (name, t) in [
            ("beta", &beta),
            ("running_mean", &running_mean),
            ("running_var", &running_var),
        ] {
            if t.shape() != [c] {
                return Err(Error::shape(format!(
                    "{name} shape {:?} does not match {c} channels",
                    t.shape()
                )));
            }
        }
        if running_var.data().iter().any(|&v| v < 0.0) {
            return Err(Error::Config("running variance must be non-negative".into()));
        }
        if !(epsilon >= 0.0) {
            return Err(Error::Config(format!("epsilon must be non-negative, got {epsilon}")));
        }
        Ok(BatchNormParams {
            gamma,
            beta,
            running_mean,
            running_var,
            epsilon,
            momentum: DEFAULT_MOMENTUM,
            initialized: true,
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Folds one batch's statistics into the running estimates. The first
    /// observed batch replaces the placeholder values outright.
    pub fn update_running(&mut self, stats: &BatchStats) {
        let m = self.momentum;
        if self.initialized {
            for (r, &b) in self.running_mean.data_mut().iter_mut().zip(&stats.mean) {
                *r = m * *r + (1.0 - m) * b;
            }
            for (r, &b) in self.running_var.data_mut().iter_mut().zip(&stats.var) {
                *r = m * *r + (1.0 - m) * b;
            }
        } else {
            self.running_mean.data_mut().copy_from_slice(&stats.mean);
            self.running_var.data_mut().copy_from_slice(&stats.var);
            self.initialized = true;
        }
    }
}

/// Per-channel mean and population variance of one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

/// Everything the backward pass needs from a forward evaluation.
#[derive(Clone, Debug)]
pub struct BatchNormForward {
    pub output: Tensor,
    pub mode: Mode,
    /// Normalized input (train mode only).
    pub normalized: Option<Tensor>,
    /// `1 / sqrt(var + eps)` per channel, from batch or running statistics.
    pub inv_std: Vec<f64>,
    /// Batch statistics (train mode only).
    pub stats: Option<BatchStats>,
}

/// Pure forward pass: computes the output and, in train mode, the batch
/// statistics, without touching the running estimates.
pub fn batch_norm_forward(
    input: &Tensor,
    params: &BatchNormParams,
    mode: Mode,
) -> Result<BatchNormForward> {
    let (n, c, h, w) = input.dims4()?;
    if params.channels() != c {
        return Err(Error::shape(format!(
            "batch norm has {} channels, input has {c}",
            params.channels()
        )));
    }
    let plane = h * w;
    let count = n * plane;
    let x = input.data();
    let gamma = params.gamma.data();
    let beta = params.beta.data();
    let eps = params.epsilon as f64;
    let mut out = vec![0.0f32; x.len()];

    match mode {
        Mode::Train => {
            if count < 2 {
                return Err(Error::shape(format!(
                    "train-mode batch norm needs at least 2 values per channel, got {count}"
                )));
            }
            let mut normalized = vec![0.0f32; x.len()];
            let mut mean = vec![0.0f32; c];
            let mut var = vec![0.0f32; c];
            let mut inv_std = vec![0.0f64; c];
            for ch in 0..c {
                let planes = || (0..n).map(move |b| (b * c + ch) * plane);
                let mut sum = 0.0f64;
                for s in planes() {
                    sum += x[s..s + plane].iter().map(|&v| v as f64).sum::<f64>();
                }
                let mu = sum / count as f64;
                let mut sq = 0.0f64;
                for s in planes() {
                    sq += x[s..s + plane]
                        .iter()
                        .map(|&v| (v as f64 - mu).powi(2))
                        .sum::<f64>();
                }
                let sigma2 = sq / count as f64;
                let inv = 1.0 / (sigma2 + eps).sqrt();
                for s in planes() {
                    for k in s..s + plane {
                        let xh = (x[k] as f64 - mu) * inv;
                        normalized[k] = xh as f32;
                        out[k] = (gamma[ch] as f64 * xh + beta[ch] as f64) as f32;
                    }
                }
                mean[ch] = mu as f32;
                var[ch] = sigma2 as f32;
                inv_std[ch] = inv;
            }
            Ok(BatchNormForward {
                output: Tensor::new(input.shape().to_vec(), out)?.ensure_finite("batch_norm")?,
                mode,
                normalized: Some(Tensor::new(input.shape().to_vec(), normalized)?),
                inv_std,
                stats: Some(BatchStats { mean, var }),
            })
        }
        Mode::Eval => {
            if !params.initialized {
                return Err(Error::Config(
                    "eval-mode batch norm with uninitialized running statistics".into(),
                ));
            }
            let rm = params.running_mean.data();
            let rv = params.running_var.data();
            let inv_std: Vec<f64> = rv.iter().map(|&v| 1.0 / (v as f64 + eps).sqrt()).collect();
            for b in 0..n {
                for ch in 0..c {
                    let s = (b * c + ch) * plane;
                    let scale = gamma[ch] as f64 * inv_std[ch];
                    let shift = beta[ch] as f64 - rm[ch] as f64 * scale;
                    for k in s..s + plane {
                        out[k] = (x[k] as f64 * scale + shift) as f32;
                    }
                }
            }
            Ok(BatchNormForward {
                output: Tensor::new(input.shape().to_vec(), out)?.ensure_finite("batch_norm")?,
                mode,
                normalized: None,
                inv_std,
                stats: None,
            })
        }
    }
}

/// Normalizes `input`; in train mode the running statistics of `params` are
/// updated from the batch.
pub fn batch_norm(input: &Tensor, params: &mut BatchNormParams, mode: Mode) -> Result<Tensor> {
    let fwd = batch_norm_forward(input, params, mode)?;
    if let Some(stats) = &fwd.stats {
        params.update_running(stats);
    }
    Ok(fwd.output)
}

#[derive(Clone, Debug)]
pub struct BatchNormGrads {
    pub input: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
}

/// Vector-Jacobian product of train-mode batch norm. The gradient flows
/// through the batch mean and variance; `normalized` and `inv_std` come from
/// [`batch_norm_forward`].
pub fn batch_norm_backward(
    normalized: &Tensor,
    inv_std: &[f64],
    gamma: &Tensor,
    grad_out: &Tensor,
) -> Result<BatchNormGrads> {
    normalized.require_same_shape(grad_out)?;
    let (n, c, h, w) = normalized.dims4()?;
    if inv_std.len() != c || gamma.len() != c {
        return Err(Error::shape(format!(
            "batch norm backward expects {c} channels of statistics"
        )));
    }
    let plane = h * w;
    let count = (n * plane) as f64;
    let dy = grad_out.data();
    let xh = normalized.data();
    let g = gamma.data();
    let mut dx = vec![0.0f32; dy.len()];
    let mut dgamma = vec![0.0f32; c];
    let mut dbeta = vec![0.0f32; c];

    for ch in 0..c {
        let starts: Vec<usize> = (0..n).map(|b| (b * c + ch) * plane).collect();
        let (mut sum_dy, mut sum_dy_xh) = (0.0f64, 0.0f64);
        for &s in &starts {
            for k in s..s + plane {
                sum_dy += dy[k] as f64;
                sum_dy_xh += dy[k] as f64 * xh[k] as f64;
            }
        }
        let gi = g[ch] as f64 * inv_std[ch];
        for &s in &starts {
            for k in s..s + plane {
                let v = gi * (dy[k] as f64 - sum_dy / count - xh[k] as f64 * sum_dy_xh / count);
                dx[k] = v as f32;
            }
        }
        dgamma[ch] = sum_dy_xh as f32;
        dbeta[ch] = sum_dy as f32;
    }
    Ok(BatchNormGrads {
        input: Tensor::new(normalized.shape().to_vec(), dx)?,
        gamma: Tensor::new(vec![c], dgamma)?,
        beta: Tensor::new(vec![c], dbeta)?,
    })
}

/// Vector-Jacobian product of eval-mode batch norm, where mean and variance
/// are constants.
pub fn batch_norm_eval_backward(
    input: &Tensor,
    params: &BatchNormParams,
    grad_out: &Tensor,
) -> Result<BatchNormGrads> {
    input.require_same_shape(grad_out)?;
    let (n, c, h, w) = input.dims4()?;
    let plane = h * w;
    let eps = params.epsilon as f64;
    let (x, dy) = (input.data(), grad_out.data());
    let g = params.gamma.data();
    let rm = params.running_mean.data();
    let rv = params.running_var.data();
    let mut dx = vec![0.0f32; dy.len()];
    let mut dgamma = vec![0.0f64; c];
    let mut dbeta = vec![0.0f64; c];
    for b in 0..n {
        for ch in 0..c {
            let inv = 1.0 / (rv[ch] as f64 + eps).sqrt();
            let s = (b * c + ch) * plane;
            for k in s..s + plane {
                dx[k] = (dy[k] as f64 * g[ch] as f64 * inv) as f32;
                dgamma[ch] += dy[k] as f64 * (x[k] as f64 - rm[ch] as f64) * inv;
                dbeta[ch] += dy[k] as f64;
            }
        }
    }
    Ok(BatchNormGrads {
        input: Tensor::new(input.shape().to_vec(), dx)?,
        gamma: Tensor::new(vec![c], dgamma.into_iter().map(|v| v as f32).collect())?,
        beta: Tensor::new(vec![c], dbeta.into_iter().map(|v| v as f32).collect())?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn eval_with_unit_stats_is_identity() {
        let mut p = BatchNormParams::with_running_stats(
            Tensor::full(&[2], 1.0),
            Tensor::zeros(&[2]),
            Tensor::zeros(&[2]),
            Tensor::full(&[2], 1.0),
            0.0,
        )
        .unwrap();
        let x = Tensor::from_fn(&[2, 2, 3, 3], |i| i as f32 * 0.25 - 3.0);
        assert_eq!(batch_norm(&x, &mut p, Mode::Eval).unwrap(), x);
    }

    #[test]
    fn train_mode_three_values() {
        let mut p = BatchNormParams::new(1);
        p.epsilon = 0.0;
        let x = Tensor::new(vec![1, 1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let y = batch_norm(&x, &mut p, Mode::Train).unwrap();
        let r = (1.5f32).sqrt();
        for (a, b) in y.data().iter().zip([-r, 0.0, r]) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
        // First batch seeds the running statistics directly.
        assert!(p.initialized);
        assert_eq!(p.running_mean.data(), &[2.0]);
        assert!((p.running_var.data()[0] - 2.0 / 3.0).abs() < 1e-7);
    }

    #[test]
    fn train_mode_output_is_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::from_fn(&[4, 3, 5, 5], |_| rng.gen_range(-3.0..5.0));
        let mut p = BatchNormParams::new(3);
        let y = batch_norm(&x, &mut p, Mode::Train).unwrap();
        for ch in 0..3 {
            let vals: Vec<f64> = (0..4)
                .flat_map(|b| {
                    let s = (b * 3 + ch) * 25;
                    y.data()[s..s + 25].to_vec()
                })
                .map(|v| v as f64)
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn running_stats_follow_momentum() {
        let mut p = BatchNormParams::new(1);
        p.initialized = true;
        p.update_running(&BatchStats {
            mean: vec![1.0],
            var: vec![3.0],
        });
        assert!((p.running_mean.data()[0] - 0.01).abs() < 1e-7);
        assert!((p.running_var.data()[0] - (0.99 + 0.03)).abs() < 1e-6);
    }

    #[test]
    fn eval_requires_initialized_stats() {
        let p = BatchNormParams::new(1);
        let x = Tensor::zeros(&[1, 1, 2, 2]);
        assert!(matches!(
            batch_norm_forward(&x, &p, Mode::Eval),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn train_mode_needs_two_values() {
        let mut p = BatchNormParams::new(1);
        let x = Tensor::zeros(&[1, 1, 1, 1]);
        assert!(batch_norm(&x, &mut p, Mode::Train).is_err());
    }
}
