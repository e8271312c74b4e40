use super::Tape;
use crate::error::{Error, Result};
use crate::tensor::{gemm, gemm_a_bt, gemm_at_b, Scalar, Shape, Tensor};

/// Fully connected layer `y = Wᵀx + b` with `W` stored `(in_dim, out_dim)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T: Scalar> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![T::zero(); in_dim * out_dim],
            bias: vec![T::zero(); out_dim],
        }
    }

    pub fn param_count(&self) -> usize {
        self.in_dim * self.out_dim + self.out_dim
    }

    /// Applies the layer to a single vector.
    pub fn apply(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.in_dim {
            return Err(Error::Shape(format!(
                "dense layer expects {} inputs, got {}",
                self.in_dim,
                x.len()
            )));
        }
        let mut y = self.bias.clone();
        gemm(x, &self.weights, &mut y, 1, self.in_dim, self.out_dim);
        Ok(y)
    }

    /// Accepts `[N,1,1,in_dim]` (or any shape with `H·W·C == in_dim`).
    pub fn forward(&self, x: &Tensor<T>, keep_tape: bool) -> Result<(Tensor<T>, Option<Tape<T>>)> {
        let s = x.shape();
        if s.sample_len() != self.in_dim {
            return Err(Error::Shape(format!(
                "dense layer expects {} inputs per item, got {s}",
                self.in_dim
            )));
        }
        let mut y = Vec::with_capacity(s.n * self.out_dim);
        for _ in 0..s.n {
            y.extend_from_slice(&self.bias);
        }
        gemm(x.data(), &self.weights, &mut y, s.n, self.in_dim, self.out_dim);
        let out = Tensor::from_raw(Shape::new(s.n, 1, 1, self.out_dim), y);
        Ok((out, keep_tape.then(|| Tape::Dense { input: x.clone() })))
    }

    pub fn backward(&self, tape: Tape<T>, grad_out: &Tensor<T>) -> Result<(Tensor<T>, Vec<Vec<T>>)> {
        let Tape::Dense { input } = tape else {
            return Err(Error::TapeMismatch("expected dense tape".into()));
        };
        let n = input.shape().n;
        if grad_out.shape() != Shape::new(n, 1, 1, self.out_dim) {
            return Err(Error::Shape(format!(
                "dense grad {} does not match output [{n},1,1,{}]",
                grad_out.shape(),
                self.out_dim
            )));
        }
        let mut dw = vec![T::zero(); self.weights.len()];
        gemm_at_b(input.data(), grad_out.data(), &mut dw, n, self.in_dim, self.out_dim);
        let mut db = vec![T::zero(); self.out_dim];
        for row in grad_out.data().chunks_exact(self.out_dim) {
            for (a, &g) in db.iter_mut().zip(row) {
                *a = *a + g;
            }
        }
        let mut dx = vec![T::zero(); input.len()];
        gemm_a_bt(grad_out.data(), &self.weights, &mut dx, n, self.out_dim, self.in_dim);
        Ok((Tensor::from_raw(input.shape(), dx), vec![dw, db]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weights() {
        let mut d = Dense::<f32>::zeros(3, 3);
        for i in 0..3 {
            d.weights[i * 3 + i] = 1.0;
        }
        assert_eq!(d.apply(&[1.0, -2.0, 0.5]).unwrap(), vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn table_param_counts() {
        assert_eq!(Dense::<f32>::zeros(256, 512).param_count(), 131_584);
        assert_eq!(Dense::<f32>::zeros(512, 2).param_count(), 1026);
    }

    #[test]
    fn scalar_chain_rule() {
        // y = w·x, L = y², x = 2, w = 1 → dL/dw = 2·y·x = 8
        let mut d = Dense::<f64>::zeros(1, 1);
        d.weights[0] = 1.0;
        let x = Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![2.0]).unwrap();
        let (y, tape) = d.forward(&x, true).unwrap();
        let dy = y.map(|v| 2.0 * v);
        let (_, grads) = d.backward(tape.unwrap(), &dy).unwrap();
        assert_eq!(grads[0], vec![8.0]);
    }

    #[test]
    fn dimension_mismatch() {
        let d = Dense::<f32>::zeros(4, 2);
        assert!(d.apply(&[1.0, 2.0]).is_err());
    }
}
