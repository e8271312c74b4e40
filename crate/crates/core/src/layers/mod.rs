//! Layer kernels with hand-written forward and backward passes.
//!
//! Every layer is a pure function of `(input, parameters)`. Forward returns
//! an optional [`Tape`] holding whatever the backward pass needs; backward
//! consumes that tape by value, so a tape can only be used once.

mod batchnorm;
mod conv;
mod dense;
mod loss;
mod pool;
mod relu;
mod softmax;

pub use batchnorm::{BatchNorm, BN_EPSILON, BN_MOMENTUM};
pub use conv::Conv2d;
pub use dense::Dense;
pub use loss::{Loss, CE_FLOOR};
pub use pool::{gap_backward, gap_forward, maxpool_backward, maxpool_forward};
pub use relu::{relu_backward, relu_forward};
pub use softmax::{softmax, softmax_backward, softmax_forward};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Whether batch normalization uses batch statistics or running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Saved forward state, one variant per layer kind.
#[derive(Debug, Clone)]
pub enum Tape<T: Scalar> {
    Conv {
        input_shape: Shape,
        /// im2col rows for each batch item.
        cols: Vec<Vec<T>>,
    },
    BatchNorm {
        mode: Mode,
        xhat: Tensor<T>,
        inv_std: Vec<T>,
        batch_mean: Vec<T>,
        batch_var: Vec<T>,
    },
    Relu {
        input: Tensor<T>,
    },
    MaxPool {
        input_shape: Shape,
        argmax: Vec<usize>,
    },
    Gap {
        input_shape: Shape,
    },
    Dense {
        input: Tensor<T>,
    },
    Softmax {
        probs: Tensor<T>,
    },
}

impl<T: Scalar> Tape<T> {
    fn kind(&self) -> &'static str {
        match self {
            Tape::Conv { .. } => "conv",
            Tape::BatchNorm { .. } => "batchnorm",
            Tape::Relu { .. } => "relu",
            Tape::MaxPool { .. } => "maxpool",
            Tape::Gap { .. } => "gap",
            Tape::Dense { .. } => "dense",
            Tape::Softmax { .. } => "softmax",
        }
    }
}

/// One stage of the network.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T: Scalar> {
    Conv(Conv2d<T>),
    BatchNorm(BatchNorm<T>),
    Relu,
    MaxPool,
    Gap,
    Dense(Dense<T>),
    Softmax,
}

impl<T: Scalar> Layer<T> {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv",
            Layer::BatchNorm(_) => "batchnorm",
            Layer::Relu => "relu",
            Layer::MaxPool => "maxpool",
            Layer::Gap => "gap",
            Layer::Dense(_) => "dense",
            Layer::Softmax => "softmax",
        }
    }

    pub fn forward(&self, x: &Tensor<T>, mode: Mode, keep_tape: bool) -> Result<(Tensor<T>, Option<Tape<T>>)> {
        match self {
            Layer::Conv(c) => c.forward(x, keep_tape),
            Layer::BatchNorm(b) => b.forward(x, mode, keep_tape),
            Layer::Relu => Ok(relu_forward(x, keep_tape)),
            Layer::MaxPool => maxpool_forward(x, keep_tape),
            Layer::Gap => Ok(gap_forward(x, keep_tape)),
            Layer::Dense(d) => d.forward(x, keep_tape),
            Layer::Softmax => Ok(softmax_forward(x, keep_tape)),
        }
    }

    /// Returns the input gradient and one gradient buffer per learnable
    /// parameter, in [`Layer::params`] order.
    pub fn backward(&self, tape: Tape<T>, grad_out: &Tensor<T>) -> Result<(Tensor<T>, Vec<Vec<T>>)> {
        match (self, tape) {
            (Layer::Conv(c), t @ Tape::Conv { .. }) => c.backward(t, grad_out),
            (Layer::BatchNorm(b), t @ Tape::BatchNorm { .. }) => b.backward(t, grad_out),
            (Layer::Relu, t @ Tape::Relu { .. }) => Ok((relu_backward(t, grad_out)?, vec![])),
            (Layer::MaxPool, t @ Tape::MaxPool { .. }) => Ok((maxpool_backward(t, grad_out)?, vec![])),
            (Layer::Gap, t @ Tape::Gap { .. }) => Ok((gap_backward(t, grad_out)?, vec![])),
            (Layer::Dense(d), t @ Tape::Dense { .. }) => d.backward(t, grad_out),
            (Layer::Softmax, t @ Tape::Softmax { .. }) => Ok((softmax_backward(t, grad_out)?, vec![])),
            (layer, tape) => Err(Error::TapeMismatch(format!(
                "{} tape passed to {} layer",
                tape.kind(),
                layer.kind()
            ))),
        }
    }

    /// Learnable parameter buffers.
    pub fn params(&self) -> Vec<&[T]> {
        match self {
            Layer::Conv(c) => vec![&c.weights, &c.bias],
            Layer::BatchNorm(b) => vec![&b.gamma, &b.beta],
            Layer::Dense(d) => vec![&d.weights, &d.bias],
            _ => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        match self {
            Layer::Conv(c) => vec![&mut c.weights, &mut c.bias],
            Layer::BatchNorm(b) => vec![&mut b.gamma, &mut b.beta],
            Layer::Dense(d) => vec![&mut d.weights, &mut d.bias],
            _ => vec![],
        }
    }

    pub fn learnable_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Non-learned state carried in checkpoints (batch-norm running stats).
    pub fn tracked_count(&self) -> usize {
        match self {
            Layer::BatchNorm(b) => b.running_mean.len() + b.running_var.len(),
            _ => 0,
        }
    }
}
