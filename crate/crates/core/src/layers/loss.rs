use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Probability floor inside the cross-entropy logarithm.
pub const CE_FLOOR: f64 = 1e-12;

/// Loss on softmax probabilities against a one-hot target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// Mean over classes of the squared probability error.
    #[default]
    Mse,
    /// `−ln max(p_target, CE_FLOOR)`.
    CrossEntropy,
}

impl Loss {
    /// Loss of one probability vector against class `target`.
    pub fn value<T: Scalar>(self, probs: &[T], target: usize) -> T {
        match self {
            Loss::Mse => {
                let sum: T = probs
                    .iter()
                    .enumerate()
                    .map(|(i, &p)| {
                        let t = if i == target { T::one() } else { T::zero() };
                        (p - t) * (p - t)
                    })
                    .sum();
                sum / T::from_usize(probs.len())
            }
            Loss::CrossEntropy => -probs[target].max(T::from_f64(CE_FLOOR)).ln(),
        }
    }

    /// d(loss)/d(probs) for one sample.
    pub fn gradient<T: Scalar>(self, probs: &[T], target: usize) -> Vec<T> {
        match self {
            Loss::Mse => {
                let scale = T::from_f64(2.0) / T::from_usize(probs.len());
                probs
                    .iter()
                    .enumerate()
                    .map(|(i, &p)| {
                        let t = if i == target { T::one() } else { T::zero() };
                        scale * (p - t)
                    })
                    .collect()
            }
            Loss::CrossEntropy => {
                let floor = T::from_f64(CE_FLOOR);
                let mut g = vec![T::zero(); probs.len()];
                if probs[target] > floor {
                    g[target] = -T::one() / probs[target];
                }
                g
            }
        }
    }

    /// Mean loss over a `[N,1,1,C]` batch and its gradient (already divided by N).
    pub fn batch<T: Scalar>(self, probs: &Tensor<T>, targets: &[usize]) -> Result<(T, Tensor<T>)> {
        let s = probs.shape();
        if s.n != targets.len() || s.h != 1 || s.w != 1 {
            return Err(Error::Shape(format!(
                "loss expects [{},1,1,C] probabilities, got {s}",
                targets.len()
            )));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= s.c) {
            return Err(Error::InvalidArgument(format!("target class {t} out of range")));
        }
        let n = T::from_usize(s.n.max(1));
        let mut total = T::zero();
        let mut grad = Vec::with_capacity(probs.len());
        for (p, &t) in probs.data().chunks_exact(s.c).zip(targets) {
            total = total + self.value(p, t);
            grad.extend(self.gradient(p, t).into_iter().map(|g| g / n));
        }
        let loss = total / n;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("loss evaluated to {loss}")));
        }
        Ok((loss, Tensor::from_raw(s, grad)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction_has_zero_mse() {
        assert_eq!(Loss::Mse.value(&[1.0f64, 0.0], 0), 0.0);
    }

    #[test]
    fn uniform_prediction() {
        assert!((Loss::Mse.value(&[0.5f64, 0.5], 0) - 0.25).abs() < 1e-15);
        assert!((Loss::CrossEntropy.value(&[0.5f64, 0.5], 0) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_is_floored() {
        let v = Loss::CrossEntropy.value(&[0.0f64, 1.0], 0);
        assert!((v - (-(CE_FLOOR.ln()))).abs() < 1e-9);
    }
}
