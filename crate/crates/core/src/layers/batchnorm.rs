use super::{Mode, Tape};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const BN_EPSILON: f64 = 1e-5;
/// Weight of the current batch in the running-statistics update.
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel batch normalization.
///
/// Statistics are taken jointly over the batch and both spatial axes, so a
/// `[N,1,1,C]` input (after the dense layer) normalizes over the batch only.
/// Variance is the biased `1/m` estimate in both the normalization and the
/// running-statistics update.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T: Scalar> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub epsilon: T,
    pub momentum: T,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            epsilon: T::from_f64(BN_EPSILON),
            momentum: T::from_f64(BN_MOMENTUM),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn check_channels(&self, x: &Tensor<T>) -> Result<()> {
        if x.shape().c != self.channels() {
            return Err(Error::Shape(format!(
                "batchnorm expects {} channels, got {}",
                self.channels(),
                x.shape().c
            )));
        }
        Ok(())
    }

    /// Per-channel mean and biased variance over every non-channel position.
    pub fn batch_statistics(&self, x: &Tensor<T>) -> Result<(Vec<T>, Vec<T>)> {
        self.check_channels(x)?;
        let c = self.channels();
        let m = x.len() / c.max(1);
        if m == 0 {
            return Err(Error::InvalidArgument("batchnorm over an empty batch".into()));
        }
        let count = T::from_usize(m);
        let mut mean = vec![T::zero(); c];
        for px in x.data().chunks_exact(c) {
            for (a, &v) in mean.iter_mut().zip(px) {
                *a = *a + v;
            }
        }
        for v in &mut mean {
            *v = *v / count;
        }
        let mut var = vec![T::zero(); c];
        for px in x.data().chunks_exact(c) {
            for ((a, &v), &mu) in var.iter_mut().zip(px).zip(&mean) {
                let d = v - mu;
                *a = *a + d * d;
            }
        }
        for v in &mut var {
            *v = *v / count;
        }
        Ok((mean, var))
    }

    pub fn forward(&self, x: &Tensor<T>, mode: Mode, keep_tape: bool) -> Result<(Tensor<T>, Option<Tape<T>>)> {
        self.check_channels(x)?;
        let c = self.channels();
        let (mean, var) = match mode {
            Mode::Train => self.batch_statistics(x)?,
            Mode::Infer => (self.running_mean.clone(), self.running_var.clone()),
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + self.epsilon).sqrt()).collect();
        let mut xhat = Vec::with_capacity(x.len());
        let mut y = Vec::with_capacity(x.len());
        for px in x.data().chunks_exact(c) {
            for ch in 0..c {
                let h = (px[ch] - mean[ch]) * inv_std[ch];
                xhat.push(h);
                y.push(self.gamma[ch] * h + self.beta[ch]);
            }
        }
        let out = Tensor::from_raw(x.shape(), y);
        let tape = keep_tape.then(|| Tape::BatchNorm {
            mode,
            xhat: Tensor::from_raw(x.shape(), xhat),
            inv_std,
            batch_mean: mean,
            batch_var: var,
        });
        Ok((out, tape))
    }

    /// Exponential moving average: `new = (1 - momentum)·old + momentum·batch`.
    pub fn update_running(&mut self, batch_mean: &[T], batch_var: &[T]) {
        let keep = T::one() - self.momentum;
        for (r, &b) in self.running_mean.iter_mut().zip(batch_mean) {
            *r = keep * *r + self.momentum * b;
        }
        for (r, &b) in self.running_var.iter_mut().zip(batch_var) {
            *r = keep * *r + self.momentum * b;
        }
    }

    pub fn backward(&self, tape: Tape<T>, grad_out: &Tensor<T>) -> Result<(Tensor<T>, Vec<Vec<T>>)> {
        let Tape::BatchNorm {
            mode, xhat, inv_std, ..
        } = tape
        else {
            return Err(Error::TapeMismatch("expected batchnorm tape".into()));
        };
        if grad_out.shape() != xhat.shape() {
            return Err(Error::Shape(format!(
                "batchnorm grad {} does not match output {}",
                grad_out.shape(),
                xhat.shape()
            )));
        }
        let c = self.channels();
        let m = xhat.len() / c;
        let mut dgamma = vec![T::zero(); c];
        let mut dbeta = vec![T::zero(); c];
        for (dy, xh) in grad_out.data().chunks_exact(c).zip(xhat.data().chunks_exact(c)) {
            for ch in 0..c {
                dgamma[ch] = dgamma[ch] + dy[ch] * xh[ch];
                dbeta[ch] = dbeta[ch] + dy[ch];
            }
        }
        let mut dx = Vec::with_capacity(xhat.len());
        match mode {
            Mode::Infer => {
                for dy in grad_out.data().chunks_exact(c) {
                    for ch in 0..c {
                        dx.push(dy[ch] * self.gamma[ch] * inv_std[ch]);
                    }
                }
            }
            Mode::Train => {
                // dx = inv_std/m · (m·dxhat − Σdxhat − xhat·Σ(dxhat·xhat)),
                // with dxhat = γ·dy, so the sums are γ·dbeta and γ·dgamma.
                let mt = T::from_usize(m);
                for (dy, xh) in grad_out.data().chunks_exact(c).zip(xhat.data().chunks_exact(c)) {
                    for ch in 0..c {
                        let g = self.gamma[ch];
                        let v = mt * g * dy[ch] - g * dbeta[ch] - xh[ch] * g * dgamma[ch];
                        dx.push(v * inv_std[ch] / mt);
                    }
                }
            }
        }
        Ok((Tensor::from_raw(xhat.shape(), dx), vec![dgamma, dbeta]))
    }
}
