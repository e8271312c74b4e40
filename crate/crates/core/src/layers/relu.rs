use super::Tape;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// `max(0, x)`; zero maps to zero.
pub fn relu_forward<T: Scalar>(x: &Tensor<T>, keep_tape: bool) -> (Tensor<T>, Option<Tape<T>>) {
    let y = x.map(|v| if v > T::zero() { v } else { T::zero() });
    (y, keep_tape.then(|| Tape::Relu { input: x.clone() }))
}

/// Passes the gradient where the input was strictly positive.
pub fn relu_backward<T: Scalar>(tape: Tape<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let Tape::Relu { input } = tape else {
        return Err(Error::TapeMismatch("expected relu tape".into()));
    };
    if input.shape() != grad_out.shape() {
        return Err(Error::Shape(format!(
            "relu grad {} does not match input {}",
            grad_out.shape(),
            input.shape()
        )));
    }
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Ok(Tensor::from_raw(input.shape(), data))
}
