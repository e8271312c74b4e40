use super::Tape;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// 2×2 max pooling with stride 2. Ties go to the first position in scan order.
pub fn maxpool_forward<T: Scalar>(x: &Tensor<T>, keep_tape: bool) -> Result<(Tensor<T>, Option<Tape<T>>)> {
    let s = x.shape();
    if s.h % 2 != 0 || s.w % 2 != 0 {
        return Err(Error::Shape(format!("max pooling needs even extents, got {s}")));
    }
    let out_shape = Shape::new(s.n, s.h / 2, s.w / 2, s.c);
    let mut out = Vec::with_capacity(out_shape.len());
    let mut argmax = Vec::with_capacity(if keep_tape { out_shape.len() } else { 0 });
    let data = x.data();
    for n in 0..s.n {
        for oy in 0..out_shape.h {
            for ox in 0..out_shape.w {
                for c in 0..s.c {
                    let mut best_i = x.index(n, 2 * oy, 2 * ox, c);
                    let mut best = data[best_i];
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = x.index(n, 2 * oy + dy, 2 * ox + dx, c);
                        if data[i] > best {
                            best = data[i];
                            best_i = i;
                        }
                    }
                    out.push(best);
                    if keep_tape {
                        argmax.push(best_i);
                    }
                }
            }
        }
    }
    let tape = keep_tape.then_some(Tape::MaxPool { input_shape: s, argmax });
    Ok((Tensor::from_raw(out_shape, out), tape))
}

/// Routes each output gradient to the recorded argmax position.
pub fn maxpool_backward<T: Scalar>(tape: Tape<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let Tape::MaxPool { input_shape, argmax } = tape else {
        return Err(Error::TapeMismatch("expected maxpool tape".into()));
    };
    if grad_out.len() != argmax.len() {
        return Err(Error::Shape(format!(
            "maxpool grad {} does not match recorded output",
            grad_out.shape()
        )));
    }
    let mut dx = vec![T::zero(); input_shape.len()];
    for (&i, &g) in argmax.iter().zip(grad_out.data()) {
        dx[i] = dx[i] + g;
    }
    Ok(Tensor::from_raw(input_shape, dx))
}

/// Global average pooling: `[N,H,W,C] → [N,1,1,C]`.
pub fn gap_forward<T: Scalar>(x: &Tensor<T>, keep_tape: bool) -> (Tensor<T>, Option<Tape<T>>) {
    let s = x.shape();
    let mut out = vec![T::zero(); s.n * s.c];
    let count = T::from_usize(s.h * s.w);
    for n in 0..s.n {
        let acc = &mut out[n * s.c..(n + 1) * s.c];
        for px in x.sample(n).chunks_exact(s.c) {
            for (a, &v) in acc.iter_mut().zip(px) {
                *a = *a + v;
            }
        }
        for a in acc.iter_mut() {
            *a = *a / count;
        }
    }
    let tape = keep_tape.then_some(Tape::Gap { input_shape: s });
    (Tensor::from_raw(Shape::new(s.n, 1, 1, s.c), out), tape)
}

pub fn gap_backward<T: Scalar>(tape: Tape<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let Tape::Gap { input_shape: s } = tape else {
        return Err(Error::TapeMismatch("expected gap tape".into()));
    };
    if grad_out.shape() != Shape::new(s.n, 1, 1, s.c) {
        return Err(Error::Shape(format!(
            "gap grad {} does not match output of {s}",
            grad_out.shape()
        )));
    }
    let count = T::from_usize(s.h * s.w);
    let mut dx = Vec::with_capacity(s.len());
    for n in 0..s.n {
        let g = &grad_out.data()[n * s.c..(n + 1) * s.c];
        for _ in 0..s.h * s.w {
            dx.extend(g.iter().map(|&v| v / count));
        }
    }
    Ok(Tensor::from_raw(s, dx))
}
