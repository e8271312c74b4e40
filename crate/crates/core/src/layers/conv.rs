use rayon::prelude::*;

use super::Tape;
use crate::error::{Error, Result};
use crate::tensor::{col2im_sample, gemm, gemm_a_bt, gemm_at_b, im2col_sample, Padding, Scalar, Shape, Tensor, Window};

/// 2-D convolution computed as im2col followed by a matrix product.
///
/// `weights` is laid out `(filter_h, filter_w, in_c, out_c)` row-major, which
/// is exactly the `K × out_c` matrix that multiplies im2col rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T: Scalar> {
    pub filter_h: usize,
    pub filter_w: usize,
    pub in_c: usize,
    pub out_c: usize,
    pub stride: usize,
    pub pad: Padding,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn zeros(filter_h: usize, filter_w: usize, in_c: usize, out_c: usize, stride: usize, pad: Padding) -> Self {
        Self {
            filter_h,
            filter_w,
            in_c,
            out_c,
            stride,
            pad,
            weights: vec![T::zero(); filter_h * filter_w * in_c * out_c],
            bias: vec![T::zero(); out_c],
        }
    }

    /// Stride-1 convolution whose output keeps the input's spatial extent.
    pub fn same(filter_h: usize, filter_w: usize, in_c: usize, out_c: usize) -> Self {
        Self::zeros(filter_h, filter_w, in_c, out_c, 1, Padding::same(filter_h, filter_w))
    }

    pub fn param_count(&self) -> usize {
        self.filter_h * self.filter_w * self.in_c * self.out_c + self.out_c
    }

    pub fn window(&self) -> Window {
        Window {
            filter_h: self.filter_h,
            filter_w: self.filter_w,
            stride: self.stride,
            pad: self.pad,
        }
    }

    #[inline]
    pub fn weight(&self, ky: usize, kx: usize, ci: usize, co: usize) -> T {
        self.weights[((ky * self.filter_w + kx) * self.in_c + ci) * self.out_c + co]
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        if input.c != self.in_c {
            return Err(Error::Shape(format!(
                "conv expects {} input channels, got {}",
                self.in_c, input.c
            )));
        }
        let (oh, ow) = self.window().output_extent(input.h, input.w)?;
        Ok(Shape::new(input.n, oh, ow, self.out_c))
    }

    pub fn forward(&self, x: &Tensor<T>, keep_tape: bool) -> Result<(Tensor<T>, Option<Tape<T>>)> {
        let s = x.shape();
        let out_shape = self.output_shape(s)?;
        let win = self.window();
        let (oh, ow) = (out_shape.h, out_shape.w);
        let k = self.filter_h * self.filter_w * self.in_c;
        let per_sample: Vec<(Vec<T>, Vec<T>)> = (0..s.n)
            .into_par_iter()
            .map(|n| {
                let cols = im2col_sample(x.sample(n), s.h, s.w, s.c, &win, oh, ow);
                let mut out = Vec::with_capacity(oh * ow * self.out_c);
                for _ in 0..oh * ow {
                    out.extend_from_slice(&self.bias);
                }
                gemm(&cols, &self.weights, &mut out, oh * ow, k, self.out_c);
                (out, cols)
            })
            .collect();
        let mut data = Vec::with_capacity(out_shape.len());
        let mut cols = Vec::new();
        for (out, c) in per_sample {
            data.extend(out);
            if keep_tape {
                cols.push(c);
            }
        }
        let tape = keep_tape.then_some(Tape::Conv { input_shape: s, cols });
        Ok((Tensor::from_raw(out_shape, data), tape))
    }

    pub fn backward(&self, tape: Tape<T>, grad_out: &Tensor<T>) -> Result<(Tensor<T>, Vec<Vec<T>>)> {
        let Tape::Conv { input_shape, cols } = tape else {
            return Err(Error::TapeMismatch("expected conv tape".into()));
        };
        let out_shape = self.output_shape(input_shape)?;
        if grad_out.shape() != out_shape {
            return Err(Error::Shape(format!(
                "conv grad {} does not match output {out_shape}",
                grad_out.shape()
            )));
        }
        let win = self.window();
        let (oh, ow) = (out_shape.h, out_shape.w);
        let p = oh * ow;
        let k = self.filter_h * self.filter_w * self.in_c;
        let s = input_shape;
        let per_sample: Vec<(Vec<T>, Vec<T>)> = cols
            .par_iter()
            .enumerate()
            .map(|(n, c)| {
                let dy = grad_out.sample(n);
                let mut dw = vec![T::zero(); k * self.out_c];
                gemm_at_b(c, dy, &mut dw, p, k, self.out_c);
                let mut dcols = vec![T::zero(); p * k];
                gemm_a_bt(dy, &self.weights, &mut dcols, p, self.out_c, k);
                (col2im_sample(&dcols, s.h, s.w, s.c, &win, oh, ow), dw)
            })
            .collect();
        let mut dw = vec![T::zero(); self.weights.len()];
        let mut dx = Vec::with_capacity(s.len());
        for (dxn, dwn) in per_sample {
            for (a, b) in dw.iter_mut().zip(&dwn) {
                *a = *a + *b;
            }
            dx.extend(dxn);
        }
        let mut db = vec![T::zero(); self.out_c];
        for row in grad_out.data().chunks_exact(self.out_c) {
            for (a, &b) in db.iter_mut().zip(row) {
                *a = *a + b;
            }
        }
        Ok((Tensor::from_raw(s, dx), vec![dw, db]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_filter_is_identity() {
        let mut conv = Conv2d::<f32>::zeros(1, 1, 1, 1, 1, Padding::ZERO);
        conv.weights[0] = 1.0;
        let x = Tensor::from_vec(Shape::new(1, 2, 2, 1), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, _) = conv.forward(&x, false).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn unit_filter_scales() {
        let mut conv = Conv2d::<f32>::zeros(1, 1, 1, 1, 1, Padding::ZERO);
        conv.weights[0] = 2.0;
        let x = Tensor::from_vec(Shape::new(1, 2, 2, 1), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, _) = conv.forward(&x, false).unwrap();
        assert_eq!(y.data(), &[2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn bias_added_per_output_channel() {
        let mut conv = Conv2d::<f32>::same(3, 3, 1, 2);
        conv.bias = vec![1.5, -2.0];
        let x = Tensor::zeros(Shape::new(1, 4, 4, 1));
        let (y, _) = conv.forward(&x, false).unwrap();
        for px in y.data().chunks(2) {
            assert_eq!(px, &[1.5, -2.0]);
        }
    }

    #[test]
    fn same_six_by_six_keeps_extent() {
        let conv = Conv2d::<f32>::same(6, 6, 1, 8);
        let out = conv.output_shape(Shape::new(1, 512, 512, 1)).unwrap();
        assert_eq!(out, Shape::new(1, 512, 512, 8));
        assert_eq!(conv.param_count(), 296);
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let conv = Conv2d::<f32>::same(3, 3, 2, 4);
        let x = Tensor::zeros(Shape::new(1, 4, 4, 1));
        assert!(matches!(conv.forward(&x, false), Err(Error::Shape(_))));
    }

    #[test]
    fn non_integral_output_is_rejected() {
        let conv = Conv2d::<f32>::zeros(2, 2, 1, 1, 2, Padding::ZERO);
        let x = Tensor::zeros(Shape::new(1, 5, 5, 1));
        assert!(conv.forward(&x, false).is_err());
    }
}
