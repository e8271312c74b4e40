use super::Tape;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Numerically stable softmax of one logit vector.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Row-wise softmax over the channel axis of a `[N,1,1,C]` tensor.
pub fn softmax_forward<T: Scalar>(x: &Tensor<T>, keep_tape: bool) -> (Tensor<T>, Option<Tape<T>>) {
    let c = x.shape().c;
    let data: Vec<T> = x.data().chunks_exact(c).flat_map(softmax).collect();
    let probs = Tensor::from_raw(x.shape(), data);
    let tape = keep_tape.then(|| Tape::Softmax { probs: probs.clone() });
    (probs, tape)
}

/// `dx_i = p_i · (g_i − Σ_j p_j g_j)` per row.
pub fn softmax_backward<T: Scalar>(tape: Tape<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let Tape::Softmax { probs } = tape else {
        return Err(Error::TapeMismatch("expected softmax tape".into()));
    };
    if probs.shape() != grad_out.shape() {
        return Err(Error::Shape(format!(
            "softmax grad {} does not match output {}",
            grad_out.shape(),
            probs.shape()
        )));
    }
    let c = probs.shape().c;
    let mut dx = Vec::with_capacity(probs.len());
    for (p, g) in probs.data().chunks_exact(c).zip(grad_out.data().chunks_exact(c)) {
        let dot: T = p.iter().zip(g).map(|(&a, &b)| a * b).sum();
        dx.extend(p.iter().zip(g).map(|(&pi, &gi)| pi * (gi - dot)));
    }
    Ok(Tensor::from_raw(probs.shape(), dx))
}
