//! Dense rank-4 tensors in `(N, H, W, C)` row-major layout, plus the small
//! set of kernels the layers are built from: matmul, im2col/col2im and
//! axis reductions.
//!
//! Storage is generic over [`Scalar`]. Training and inference use `f32`;
//! gradient checks instantiate the same code with `f64`.

use std::fmt;

use num_traits::Float;

use crate::error::{Error, Result};

/// Floating-point element type. Implemented for `f32` and `f64`.
pub trait Scalar:
    Float + Default + Send + Sync + fmt::Debug + fmt::Display + std::iter::Sum + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    fn from_usize(v: usize) -> Self {
        Self::from_f64(v as f64)
    }
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Extents of a rank-4 tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Shape {
    pub const fn new(n: usize, h: usize, w: usize, c: usize) -> Self {
        Self { n, h, w, c }
    }

    pub const fn len(&self) -> usize {
        self.n * self.h * self.w * self.c
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements in one batch item.
    pub const fn sample_len(&self) -> usize {
        self.h * self.w * self.c
    }

    pub const fn dims(&self) -> [usize; 4] {
        [self.n, self.h, self.w, self.c]
    }

    /// Same extents with a different batch size.
    pub const fn with_batch(&self, n: usize) -> Self {
        Self::new(n, self.h, self.w, self.c)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{},{},{}]", self.n, self.h, self.w, self.c)
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T: Scalar = f32> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("len", &self.data.len())
            .finish()
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            data: vec![T::zero(); shape.len()],
        }
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Self {
            shape,
            data: vec![value; shape.len()],
        }
    }

    /// Wraps `data`, checking its length and that every element is finite.
    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::Shape(format!(
                "buffer of {} elements does not fit shape {shape}",
                data.len()
            )));
        }
        let t = Self { shape, data };
        t.check_finite("tensor construction")?;
        Ok(t)
    }

    /// Unchecked constructor for kernel outputs whose length is known correct.
    pub(crate) fn from_raw(shape: Shape, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), shape.len());
        Self { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, n: usize, h: usize, w: usize, c: usize) -> usize {
        ((n * self.shape.h + h) * self.shape.w + w) * self.shape.c + c
    }

    #[inline]
    pub fn at(&self, n: usize, h: usize, w: usize, c: usize) -> T {
        self.data[self.index(n, h, w, c)]
    }

    /// Contiguous slice of batch item `n`.
    pub fn sample(&self, n: usize) -> &[T] {
        let len = self.shape.sample_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn reshape(self, shape: Shape) -> Result<Self> {
        if shape.len() != self.shape.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {} into {shape}",
                self.shape
            )));
        }
        Ok(Self {
            shape,
            data: self.data,
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .map(|v| U::from_f64(v.as_f64()))
                .collect(),
        }
    }

    /// Gathers batch items by index into a new tensor.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let len = self.shape.sample_len();
        let mut data = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            if i >= self.shape.n {
                return Err(Error::Shape(format!(
                    "batch index {i} out of range for {}",
                    self.shape
                )));
            }
            data.extend_from_slice(self.sample(i));
        }
        Ok(Self::from_raw(self.shape.with_batch(indices.len()), data))
    }

    /// Concatenates tensors with equal per-item extents along the batch axis.
    pub fn stack(parts: &[Tensor<T>]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("cannot stack zero tensors".into()))?
            .shape;
        let mut data = Vec::new();
        let mut n = 0;
        for p in parts {
            if (p.shape.h, p.shape.w, p.shape.c) != (first.h, first.w, first.c) {
                return Err(Error::Shape(format!(
                    "cannot stack {} with {first}",
                    p.shape
                )));
            }
            n += p.shape.n;
            data.extend_from_slice(&p.data);
        }
        Ok(Self::from_raw(first.with_batch(n), data))
    }

    pub fn check_finite(&self, context: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::NonFinite(format!(
                "{context}: element {i} of {} is {}",
                self.shape, self.data[i]
            ))),
        }
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T: Scalar = f32> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "buffer of {} elements does not fit {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }
}

/// `a · b` for row-major matrices.
pub fn matmul<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.cols != b.rows {
        return Err(Error::Shape(format!(
            "matmul inner dimensions differ: {}x{} by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    gemm(&a.data, &b.data, &mut out.data, a.rows, a.cols, b.cols);
    Ok(out)
}

/// `out += a · b` on raw row-major slices (`a` is `m×k`, `b` is `k×n`).
///
/// The i-k-j loop order keeps the inner loop contiguous and fixes the
/// summation order, so results are bit-reproducible for a given build.
pub(crate) fn gemm<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &av) in a_row.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(b_row) {
                *o = *o + av * bv;
            }
        }
    }
}

/// `out += aᵀ · b` where `a` is `k×m` and `b` is `k×n`.
pub(crate) fn gemm_at_b<T: Scalar>(a: &[T], b: &[T], out: &mut [T], k: usize, m: usize, n: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &av) in a_row.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in row.iter_mut().zip(b_row) {
                *o = *o + av * bv;
            }
        }
    }
}

/// `out += a · bᵀ` where `a` is `m×k` and `b` is `n×k`.
pub(crate) fn gemm_a_bt<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = T::zero();
            for (&x, &y) in a_row.iter().zip(b_row) {
                acc = acc + x * y;
            }
            out[i * n + j] = out[i * n + j] + acc;
        }
    }
}

/// Explicit zero padding around the spatial axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Padding {
    pub const ZERO: Padding = Padding {
        top: 0,
        bottom: 0,
        left: 0,
        right: 0,
    };

    /// "Same" padding for stride 1: total `k - 1` per axis, the odd pixel
    /// going after (bottom/right).
    pub fn same(filter_h: usize, filter_w: usize) -> Self {
        let th = filter_h.saturating_sub(1);
        let tw = filter_w.saturating_sub(1);
        Padding {
            top: th / 2,
            bottom: th - th / 2,
            left: tw / 2,
            right: tw - tw / 2,
        }
    }
}

/// Sliding-window geometry shared by im2col and col2im.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub filter_h: usize,
    pub filter_w: usize,
    pub stride: usize,
    pub pad: Padding,
}

impl Window {
    /// Output extents for an `h×w` input, or an error if the window does not
    /// tile the padded input exactly.
    pub fn output_extent(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.stride == 0 || self.filter_h == 0 || self.filter_w == 0 {
            return Err(Error::InvalidArgument(
                "filter extents and stride must be positive".into(),
            ));
        }
        let ph = h + self.pad.top + self.pad.bottom;
        let pw = w + self.pad.left + self.pad.right;
        if ph < self.filter_h || pw < self.filter_w {
            return Err(Error::Shape(format!(
                "filter {}x{} larger than padded input {ph}x{pw}",
                self.filter_h, self.filter_w
            )));
        }
        let (sh, sw) = (ph - self.filter_h, pw - self.filter_w);
        if sh % self.stride != 0 || sw % self.stride != 0 {
            return Err(Error::Shape(format!(
                "stride {} does not tile padded input {ph}x{pw} with filter {}x{}",
                self.stride, self.filter_h, self.filter_w
            )));
        }
        Ok((sh / self.stride + 1, sw / self.stride + 1))
    }
}

/// Unrolls one `h×w×c` sample into `(out_h·out_w) × (fh·fw·c)` rows with
/// columns ordered `(ky, kx, channel)`.
pub(crate) fn im2col_sample<T: Scalar>(
    x: &[T],
    h: usize,
    w: usize,
    c: usize,
    win: &Window,
    out_h: usize,
    out_w: usize,
) -> Vec<T> {
    let k = win.filter_h * win.filter_w * c;
    let mut cols = vec![T::zero(); out_h * out_w * k];
    for oy in 0..out_h {
        for ox in 0..out_w {
            let row = &mut cols[(oy * out_w + ox) * k..(oy * out_w + ox + 1) * k];
            for ky in 0..win.filter_h {
                let iy = (oy * win.stride + ky) as isize - win.pad.top as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..win.filter_w {
                    let ix = (ox * win.stride + kx) as isize - win.pad.left as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let src = (iy as usize * w + ix as usize) * c;
                    let dst = (ky * win.filter_w + kx) * c;
                    row[dst..dst + c].copy_from_slice(&x[src..src + c]);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col_sample`]: scatters column gradients back onto the
/// input grid, accumulating overlaps.
pub(crate) fn col2im_sample<T: Scalar>(
    cols: &[T],
    h: usize,
    w: usize,
    c: usize,
    win: &Window,
    out_h: usize,
    out_w: usize,
) -> Vec<T> {
    let k = win.filter_h * win.filter_w * c;
    let mut x = vec![T::zero(); h * w * c];
    for oy in 0..out_h {
        for ox in 0..out_w {
            let row = &cols[(oy * out_w + ox) * k..(oy * out_w + ox + 1) * k];
            for ky in 0..win.filter_h {
                let iy = (oy * win.stride + ky) as isize - win.pad.top as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..win.filter_w {
                    let ix = (ox * win.stride + kx) as isize - win.pad.left as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let dst = (iy as usize * w + ix as usize) * c;
                    let src = (ky * win.filter_w + kx) * c;
                    for ch in 0..c {
                        x[dst + ch] = x[dst + ch] + row[src + ch];
                    }
                }
            }
        }
    }
    x
}

/// Unrolls every receptive field of `input` into one matrix row.
///
/// The result has `N·out_h·out_w` rows (samples stacked in batch order) and
/// `filter_h·filter_w·C` columns. Out-of-bounds taps read as zero.
pub fn im2col<T: Scalar>(input: &Tensor<T>, win: &Window) -> Result<Matrix<T>> {
    let s = input.shape();
    let (out_h, out_w) = win.output_extent(s.h, s.w)?;
    let k = win.filter_h * win.filter_w * s.c;
    let mut data = Vec::with_capacity(s.n * out_h * out_w * k);
    for n in 0..s.n {
        data.extend(im2col_sample(input.sample(n), s.h, s.w, s.c, win, out_h, out_w));
    }
    Matrix::from_vec(s.n * out_h * out_w, k, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    N,
    H,
    W,
    C,
}

impl Axis {
    fn position(self) -> usize {
        match self {
            Axis::N => 0,
            Axis::H => 1,
            Axis::W => 2,
            Axis::C => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
    Max,
}

/// Reduces `input` over `axes`, keeping each reduced extent as 1.
///
/// Elements are visited in storage order, so the summation order is fixed.
pub fn reduce<T: Scalar>(input: &Tensor<T>, axes: &[Axis], kind: Reduction) -> Result<Tensor<T>> {
    let dims = input.shape().dims();
    let mut reduced = [false; 4];
    for a in axes {
        reduced[a.position()] = true;
    }
    let count: usize = (0..4).filter(|&i| reduced[i]).map(|i| dims[i]).product();
    if count == 0 {
        return Err(Error::InvalidArgument(
            "reduction over a zero-extent axis".into(),
        ));
    }
    let mut out_dims = dims;
    for i in 0..4 {
        if reduced[i] {
            out_dims[i] = 1;
        }
    }
    let out_shape = Shape::new(out_dims[0], out_dims[1], out_dims[2], out_dims[3]);
    let init = match kind {
        Reduction::Sum | Reduction::Mean => T::zero(),
        Reduction::Max => T::neg_infinity(),
    };
    let mut out = vec![init; out_shape.len()];
    let data = input.data();
    let mut idx = 0;
    for n in 0..dims[0] {
        for h in 0..dims[1] {
            for w in 0..dims[2] {
                for c in 0..dims[3] {
                    let coords = [n, h, w, c];
                    let mut o = 0;
                    for i in 0..4 {
                        let ci = if reduced[i] { 0 } else { coords[i] };
                        o = o * out_dims[i] + ci;
                    }
                    let v = data[idx];
                    out[o] = match kind {
                        Reduction::Max => out[o].max(v),
                        _ => out[o] + v,
                    };
                    idx += 1;
                }
            }
        }
    }
    if kind == Reduction::Mean {
        let denom = T::from_usize(count);
        for v in &mut out {
            *v = *v / denom;
        }
    }
    Ok(Tensor::from_raw(out_shape, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_matmul(a: &Matrix<f64>, b: &Matrix<f64>) -> Matrix<f64> {
        let mut out = Matrix::zeros(a.rows, b.cols);
        for i in 0..a.rows {
            for j in 0..b.cols {
                let mut s = 0.0;
                for p in 0..a.cols {
                    s += a.get(i, p) * b.get(p, j);
                }
                out.data[i * b.cols + j] = s;
            }
        }
        out
    }

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix<f64> {
        Matrix::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn identity_times_matrix() {
        let i2 = Matrix::<f32>::identity(2);
        let m = Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(matmul(&i2, &m).unwrap(), m);
    }

    #[test]
    fn zero_annihilates() {
        let m = Matrix::<f32>::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let z = Matrix::zeros(2, 2);
        assert_eq!(matmul(&m, &z).unwrap(), z);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_matrix(&mut rng, 5, 4);
        let b = random_matrix(&mut rng, 4, 3);
        let got = matmul(&a, &b).unwrap();
        let want = naive_matmul(&a, &b);
        for (g, w) in got.data.iter().zip(&want.data) {
            assert!((g - w).abs() <= 1e-6 * w.abs().max(1.0));
        }
    }

    #[test]
    fn matmul_rejects_mismatch() {
        let a = Matrix::<f32>::zeros(2, 3);
        let b = Matrix::<f32>::zeros(2, 3);
        assert!(matches!(matmul(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn transposed_kernels_agree_with_matmul() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random_matrix(&mut rng, 4, 6);
        let b = random_matrix(&mut rng, 4, 5);
        let mut out = vec![0.0; 6 * 5];
        gemm_at_b(&a.data, &b.data, &mut out, 4, 6, 5);
        let want = naive_matmul(&a.transpose(), &b);
        for (g, w) in out.iter().zip(&want.data) {
            assert!((g - w).abs() < 1e-12);
        }
        let c = random_matrix(&mut rng, 3, 6);
        let mut out = vec![0.0; 4 * 3];
        gemm_a_bt(&a.data, &c.data, &mut out, 4, 6, 3);
        let want = naive_matmul(&a, &c.transpose());
        for (g, w) in out.iter().zip(&want.data) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn im2col_unit_filter_is_scan_order() {
        let x = Tensor::<f32>::from_vec(Shape::new(1, 2, 3, 1), (1..=6).map(|v| v as f32).collect())
            .unwrap();
        let win = Window {
            filter_h: 1,
            filter_w: 1,
            stride: 1,
            pad: Padding::ZERO,
        };
        let m = im2col(&x, &win).unwrap();
        assert_eq!((m.rows, m.cols), (6, 1));
        assert_eq!(m.data, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn im2col_full_window() {
        let x = Tensor::<f32>::from_vec(Shape::new(1, 2, 2, 1), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let win = Window {
            filter_h: 2,
            filter_w: 2,
            stride: 1,
            pad: Padding::ZERO,
        };
        let m = im2col(&x, &win).unwrap();
        assert_eq!((m.rows, m.cols), (1, 4));
        assert_eq!(m.data, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn im2col_rejects_non_integral_extent() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 5, 5, 1));
        let win = Window {
            filter_h: 2,
            filter_w: 2,
            stride: 2,
            pad: Padding::ZERO,
        };
        assert!(matches!(im2col(&x, &win), Err(Error::Shape(_))));
    }

    #[test]
    fn same_padding_for_even_filter_is_asymmetric() {
        let p = Padding::same(6, 6);
        assert_eq!((p.top, p.bottom, p.left, p.right), (2, 3, 2, 3));
        let p = Padding::same(3, 3);
        assert_eq!((p.top, p.bottom, p.left, p.right), (1, 1, 1, 1));
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (h, w, c) = (5, 6, 2);
        let win = Window {
            filter_h: 3,
            filter_w: 2,
            stride: 1,
            pad: Padding {
                top: 1,
                bottom: 1,
                left: 0,
                right: 1,
            },
        };
        let (oh, ow) = win.output_extent(h, w).unwrap();
        let x: Vec<f64> = (0..h * w * c).map(|_| rng.random_range(-1.0..1.0)).collect();
        let k = win.filter_h * win.filter_w * c;
        let y: Vec<f64> = (0..oh * ow * k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cols = im2col_sample(&x, h, w, c, &win, oh, ow);
        let back = col2im_sample(&y, h, w, c, &win, oh, ow);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn reduce_mean_and_max() {
        let x = Tensor::<f64>::from_vec(Shape::new(1, 2, 2, 1), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let m = reduce(&x, &[Axis::N, Axis::H, Axis::W, Axis::C], Reduction::Mean).unwrap();
        assert_eq!(m.data(), &[2.5]);
        let y = Tensor::<f64>::from_vec(Shape::new(1, 1, 3, 1), vec![-1.0, 0.0, 7.0]).unwrap();
        let m = reduce(&y, &[Axis::W], Reduction::Max).unwrap();
        assert_eq!(m.data(), &[7.0]);
    }

    #[test]
    fn reduce_sum_over_spatial_matches_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = Shape::new(2, 3, 4, 3);
        let x = Tensor::<f64>::from_vec(s, (0..s.len()).map(|_| rng.random_range(-2.0..2.0)).collect())
            .unwrap();
        let r = reduce(&x, &[Axis::H, Axis::W], Reduction::Sum).unwrap();
        assert_eq!(r.shape(), Shape::new(2, 1, 1, 3));
        for n in 0..2 {
            for c in 0..3 {
                let mut acc = 0.0;
                for h in 0..3 {
                    for w in 0..4 {
                        acc += x.at(n, h, w, c);
                    }
                }
                assert!((r.at(n, 0, 0, c) - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn reduce_over_empty_axis_fails() {
        let x = Tensor::<f32>::zeros(Shape::new(0, 2, 2, 1));
        assert!(reduce(&x, &[Axis::N], Reduction::Sum).is_err());
    }

    #[test]
    fn from_vec_rejects_nan() {
        let r = Tensor::<f32>::from_vec(Shape::new(1, 1, 1, 2), vec![1.0, f32::NAN]);
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }
}
