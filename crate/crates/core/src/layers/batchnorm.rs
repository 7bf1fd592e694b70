//! Per-channel batch normalization over every non-channel axis.

use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.99;

#[derive(Clone, Debug)]
pub struct BatchNorm<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    /// Weight of the old running value in the moving average.
    pub momentum: f64,
    pub epsilon: f64,
}

/// What the backward pass needs from a forward call.
#[derive(Clone, Debug)]
pub struct BatchNormCache<T> {
    mode: Mode,
    mean: Vec<T>,
    inv_std: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct BatchNormGrads<T> {
    pub input: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

/// Per-channel mean and biased variance of a channels-last buffer, two-pass in `f64`.
pub fn channel_stats<T: Scalar>(data: &[T], channels: usize) -> (Vec<f64>, Vec<f64>) {
    let rows = data.len() / channels;
    let mut mean = vec![0.0f64; channels];
    for row in data.chunks_exact(channels) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v.to_f64_lossy();
        }
    }
    mean.iter_mut().for_each(|m| *m /= rows as f64);
    let mut var = vec![0.0f64; channels];
    for row in data.chunks_exact(channels) {
        for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
            let d = v.to_f64_lossy() - m;
            *s += d * d;
        }
    }
    var.iter_mut().for_each(|s| *s /= rows as f64);
    (mean, var)
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(channels: usize) -> Result<Self> {
        Ok(BatchNorm {
            gamma: Tensor::full(&[channels], T::one())?,
            beta: Tensor::zeros(&[channels])?,
            running_mean: Tensor::zeros(&[channels])?,
            running_var: Tensor::full(&[channels], T::one())?,
            momentum: DEFAULT_MOMENTUM,
            epsilon: DEFAULT_EPSILON,
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        match x.shape().last() {
            Some(&c) if c == self.channels() && x.rank() >= 2 => Ok(()),
            _ => Err(Error::shape(format!(
                "batch norm over {} channels got input {:?}",
                self.channels(),
                x.shape()
            ))),
        }
    }

    /// Normalizes `x`. Train mode uses batch statistics and folds them into the
    /// running averages; infer mode uses the running averages unchanged.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, BatchNormCache<T>)> {
        self.check_input(x)?;
        let c = self.channels();
        let eps = self.epsilon;
        let (mean, inv_std): (Vec<T>, Vec<T>) = match mode {
            Mode::Train => {
                let (mean, var) = channel_stats(x.data(), c);
                let rows = (x.len() / c) as f64;
                let unbiased = if rows > 1.0 { rows / (rows - 1.0) } else { 1.0 };
                let m = self.momentum;
                for ch in 0..c {
                    let rm = &mut self.running_mean.data_mut()[ch];
                    *rm = T::from_f64_lossy(m * rm.to_f64_lossy() + (1.0 - m) * mean[ch]);
                    let rv = &mut self.running_var.data_mut()[ch];
                    let updated = m * rv.to_f64_lossy() + (1.0 - m) * var[ch] * unbiased;
                    *rv = T::from_f64_lossy(updated.max(f64::from(f32::MIN_POSITIVE)));
                }
                (
                    mean.iter().map(|&v| T::from_f64_lossy(v)).collect(),
                    var.iter().map(|&v| T::from_f64_lossy(1.0 / (v + eps).sqrt())).collect(),
                )
            }
            Mode::Infer => self.running_stats(),
        };
        let out = self.normalize(x, &mean, &inv_std)?;
        Ok((out, BatchNormCache { mode, mean, inv_std }))
    }

    /// Infer-mode normalization without a cache or any mutation.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let (mean, inv_std) = self.running_stats();
        self.normalize(x, &mean, &inv_std)
    }

    fn running_stats(&self) -> (Vec<T>, Vec<T>) {
        let eps = self.epsilon;
        (
            self.running_mean.data().to_vec(),
            self.running_var
                .data()
                .iter()
                .map(|&v| T::from_f64_lossy(1.0 / (v.to_f64_lossy() + eps).sqrt()))
                .collect(),
        )
    }

    fn normalize(&self, x: &Tensor<T>, mean: &[T], inv_std: &[T]) -> Result<Tensor<T>> {
        let c = self.channels();
        let gamma = self.gamma.data();
        let beta = self.beta.data();
        let mut out = x.data().to_vec();
        for row in out.chunks_exact_mut(c) {
            for ch in 0..c {
                row[ch] = gamma[ch] * ((row[ch] - mean[ch]) * inv_std[ch]) + beta[ch];
            }
        }
        Tensor::from_vec(x.shape(), out)
    }

    pub fn backward(
        &self,
        grad_out: &Tensor<T>,
        x: &Tensor<T>,
        cache: Option<&BatchNormCache<T>>,
    ) -> Result<BatchNormGrads<T>> {
        let cache = cache.ok_or_else(|| Error::MissingCache("batch norm".into()))?;
        self.check_input(x)?;
        if grad_out.shape() != x.shape() {
            return Err(Error::shape(format!(
                "batch norm gradient {:?} does not match input {:?}",
                grad_out.shape(),
                x.shape()
            )));
        }
        let c = self.channels();
        let n = T::from_usize(x.len() / c).expect("row count fits a float");
        let gamma = self.gamma.data();
        let mut d_beta = vec![T::zero(); c];
        let mut d_gamma = vec![T::zero(); c];
        for (xr, gr) in x.data().chunks_exact(c).zip(grad_out.data().chunks_exact(c)) {
            for ch in 0..c {
                let xhat = (xr[ch] - cache.mean[ch]) * cache.inv_std[ch];
                d_beta[ch] = d_beta[ch] + gr[ch];
                d_gamma[ch] = d_gamma[ch] + gr[ch] * xhat;
            }
        }
        let mut dx = vec![T::zero(); x.len()];
        match cache.mode {
            Mode::Train => {
                for ((dr, xr), gr) in dx
                    .chunks_exact_mut(c)
                    .zip(x.data().chunks_exact(c))
                    .zip(grad_out.data().chunks_exact(c))
                {
                    for ch in 0..c {
                        let xhat = (xr[ch] - cache.mean[ch]) * cache.inv_std[ch];
                        dr[ch] = gamma[ch] * cache.inv_std[ch] / n
                            * (n * gr[ch] - d_beta[ch] - xhat * d_gamma[ch]);
                    }
                }
            }
            Mode::Infer => {
                for (dr, gr) in dx.chunks_exact_mut(c).zip(grad_out.data().chunks_exact(c)) {
                    for ch in 0..c {
                        dr[ch] = gr[ch] * gamma[ch] * cache.inv_std[ch];
                    }
                }
            }
        }
        Ok(BatchNormGrads {
            input: Tensor::from_vec(x.shape(), dx)?,
            gamma: Tensor::from_vec(&[c], d_gamma)?,
            beta: Tensor::from_vec(&[c], d_beta)?,
        })
    }
}
