//! Independent reference implementations used to check the library.
#![allow(dead_code)]

use msnn::data::Label;
use msnn::layers::{BatchNorm, Conv2d, Dense, Layer, Loss, Mode};
use msnn::tensor::{Padding, Shape, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Nested-loop convolution with explicit zero padding.
pub fn direct_conv(conv: &Conv2d<f64>, x: &Tensor<f64>) -> Tensor<f64> {
    let s = x.shape();
    let p = conv.pad;
    let oh = (s.h + p.top + p.bottom - conv.filter_h) / conv.stride + 1;
    let ow = (s.w + p.left + p.right - conv.filter_w) / conv.stride + 1;
    let mut out = vec![0.0; s.n * oh * ow * conv.out_c];
    for n in 0..s.n {
        for oy in 0..oh {
            for ox in 0..ow {
                for co in 0..conv.out_c {
                    let mut acc = conv.bias[co];
                    for ky in 0..conv.filter_h {
                        for kx in 0..conv.filter_w {
                            let iy = (oy * conv.stride + ky) as isize - p.top as isize;
                            let ix = (ox * conv.stride + kx) as isize - p.left as isize;
                            if iy < 0 || ix < 0 || iy >= s.h as isize || ix >= s.w as isize {
                                continue;
                            }
                            for ci in 0..conv.in_c {
                                acc += x.at(n, iy as usize, ix as usize, ci) * conv.weight(ky, kx, ci, co);
                            }
                        }
                    }
                    out[((n * oh + oy) * ow + ox) * conv.out_c + co] = acc;
                }
            }
        }
    }
    Tensor::from_vec(Shape::new(s.n, oh, ow, conv.out_c), out).unwrap()
}

/// Per-output `Σ|w·x| + |b|`: the natural scale for rounding error in a
/// convolution output.
pub fn conv_term_magnitude(conv: &Conv2d<f64>, x: &Tensor<f64>) -> Tensor<f64> {
    let mut abs = conv.clone();
    abs.weights.iter_mut().for_each(|v| *v = v.abs());
    abs.bias.iter_mut().for_each(|v| *v = v.abs());
    direct_conv(&abs, &x.map(f64::abs))
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: Shape) -> Tensor<f64> {
    Tensor::from_vec(shape, uniform_vec(rng, shape.len(), -1.0, 1.0)).unwrap()
}

/// Values spaced at least 0.01 apart and at least 0.005 from zero, in random
/// order: no kinks of ReLU or max pooling lie within a finite-difference step.
pub fn kink_free_tensor(rng: &mut ChaCha8Rng, shape: Shape) -> Tensor<f64> {
    let n = shape.len();
    let mut v: Vec<f64> = (0..n).map(|i| (i as f64 - (n / 2) as f64) * 0.01 + 0.005).collect();
    for i in (1..n).rev() {
        v.swap(i, rng.random_range(0..=i));
    }
    Tensor::from_vec(shape, v).unwrap()
}

/// Random conv layer and a compatible input.
pub fn random_conv(rng: &mut ChaCha8Rng, max_extent: usize, max_c: usize) -> (Conv2d<f64>, Tensor<f64>) {
    let fh = rng.random_range(1..=4);
    let fw = rng.random_range(1..=4);
    let ci = rng.random_range(1..=max_c);
    let co = rng.random_range(1..=max_c);
    let n = rng.random_range(1..=2);
    let mut conv = if rng.random_bool(0.5) {
        Conv2d::same(fh, fw, ci, co)
    } else {
        let stride = rng.random_range(1..=2);
        let pad = Padding {
            top: rng.random_range(0..=1),
            bottom: rng.random_range(0..=1),
            left: rng.random_range(0..=1),
            right: rng.random_range(0..=1),
        };
        Conv2d::zeros(fh, fw, ci, co, stride, pad)
    };
    // choose an input extent the window tiles exactly
    let pick = |rng: &mut ChaCha8Rng, f: usize, pad: usize| loop {
        let e = rng.random_range(f.max(2)..=max_extent);
        if (e + pad).checked_sub(f).is_some_and(|d| d % conv.stride == 0) {
            break e;
        }
    };
    let h = pick(rng, fh, conv.pad.top + conv.pad.bottom);
    let w = pick(rng, fw, conv.pad.left + conv.pad.right);
    conv.weights = uniform_vec(rng, conv.weights.len(), -1.0, 1.0);
    conv.bias = uniform_vec(rng, conv.bias.len(), -1.0, 1.0);
    let x = random_tensor(rng, Shape::new(n, h, w, ci));
    (conv, x)
}

pub fn random_batchnorm(rng: &mut ChaCha8Rng, c: usize) -> BatchNorm<f64> {
    let mut bn = BatchNorm::new(c);
    bn.gamma = uniform_vec(rng, c, 0.5, 2.0);
    bn.beta = uniform_vec(rng, c, -1.0, 1.0);
    bn.running_mean = uniform_vec(rng, c, -0.5, 0.5);
    bn.running_var = uniform_vec(rng, c, 0.5, 2.0);
    bn
}

pub fn random_dense(rng: &mut ChaCha8Rng, i: usize, o: usize) -> Dense<f64> {
    let mut d = Dense::zeros(i, o);
    d.weights = uniform_vec(rng, i * o, -1.0, 1.0);
    d.bias = uniform_vec(rng, o, -1.0, 1.0);
    d
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Finite-difference step for double-precision gradient checks.
pub const FD_STEP: f64 = 1e-5;
/// Denominator floor for relative errors of near-zero derivatives.
pub const FD_FLOOR: f64 = 1e-6;

fn layer_output(layer: &Layer<f64>, x: &Tensor<f64>, mode: Mode) -> Tensor<f64> {
    layer.forward(x, mode, false).unwrap().0
}

/// Directional difference `Σ r·(y+ - y-) / 2h`, summed elementwise so that
/// untouched outputs cancel exactly.
fn projected_difference(r: &[f64], plus: &Tensor<f64>, minus: &Tensor<f64>) -> f64 {
    r.iter()
        .zip(plus.data().iter().zip(minus.data()))
        .map(|(ri, (p, m))| ri * (p - m))
        .sum::<f64>()
        / (2.0 * FD_STEP)
}

fn probe_indices(rng: &mut ChaCha8Rng, len: usize, max: usize) -> Vec<usize> {
    if len <= max {
        (0..len).collect()
    } else {
        (0..max).map(|_| rng.random_range(0..len)).collect()
    }
}

/// Largest relative error between the analytic input and parameter
/// gradients of `layer` at `x` and central finite differences of the scalar
/// `Σ r·layer(x)` for a random projection `r`.
pub fn layer_gradient_error(rng: &mut ChaCha8Rng, layer: &Layer<f64>, x: &Tensor<f64>, mode: Mode) -> f64 {
    let (y, tape) = layer.forward(x, mode, true).unwrap();
    let r = uniform_vec(rng, y.len(), -1.0, 1.0);
    let rt = Tensor::from_vec(y.shape(), r.clone()).unwrap();
    let (dx, dparams) = layer.backward(tape.unwrap(), &rt).unwrap();
    let mut worst: f64 = 0.0;
    for i in probe_indices(rng, x.len(), 40) {
        let mut xp = x.clone();
        xp.data_mut()[i] += FD_STEP;
        let mut xm = x.clone();
        xm.data_mut()[i] -= FD_STEP;
        let num = projected_difference(&r, &layer_output(layer, &xp, mode), &layer_output(layer, &xm, mode));
        worst = worst.max(rel_err(dx.data()[i], num, FD_FLOOR));
    }
    let n_buffers = layer.params().len();
    for b in 0..n_buffers {
        let len = layer.params()[b].len();
        for i in probe_indices(rng, len, 40) {
            let mut lp = layer.clone();
            lp.params_mut()[b][i] += FD_STEP;
            let mut lm = layer.clone();
            lm.params_mut()[b][i] -= FD_STEP;
            let num = projected_difference(&r, &layer_output(&lp, x, mode), &layer_output(&lm, x, mode));
            worst = worst.max(rel_err(dparams[b][i], num, FD_FLOOR));
        }
    }
    worst
}

/// Same check for a loss on a probability vector.
pub fn loss_gradient_error(loss: Loss, probs: &[f64], target: usize) -> f64 {
    let g = loss.gradient(probs, target);
    let mut worst: f64 = 0.0;
    for i in 0..probs.len() {
        let mut p = probs.to_vec();
        p[i] += FD_STEP;
        let lp = loss.value(&p, target);
        p[i] -= 2.0 * FD_STEP;
        let lm = loss.value(&p, target);
        worst = worst.max(rel_err(g[i], (lp - lm) / (2.0 * FD_STEP), FD_FLOOR));
    }
    worst
}

/// Labels of the `k` nearest points by an all-pairs distance table, ties by
/// lower index; returns the majority label and its vote share.
pub fn knn_oracle(train: &[Vec<f32>], labels: &[Label], query: &[f32], k: usize) -> (Label, f64) {
    let mut d: Vec<(f64, usize)> = train
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let s: f64 = p.iter().zip(query).map(|(a, b)| (*a as f64 - *b as f64).powi(2)).sum();
            (s.sqrt(), i)
        })
        .collect();
    d.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = d[..k].iter().filter(|(_, i)| labels[*i] == Label::Cancerous).count();
    if 2 * pos >= k {
        (Label::Cancerous, pos as f64 / k as f64)
    } else {
        (Label::NonCancerous, (k - pos) as f64 / k as f64)
    }
}

/// Probability that a random positive outranks a random negative, ties
/// counting one half.
pub fn auc_pair_count(scores: &[f64], labels: &[Label]) -> f64 {
    let (mut twice_wins, mut pairs) = (0u128, 0u128);
    for (i, li) in labels.iter().enumerate() {
        if *li != Label::Cancerous {
            continue;
        }
        for (j, lj) in labels.iter().enumerate() {
            if *lj == Label::Cancerous {
                continue;
            }
            pairs += 1;
            if scores[i] > scores[j] {
                twice_wins += 2;
            } else if scores[i] == scores[j] {
                twice_wins += 1;
            }
        }
    }
    twice_wins as f64 / (2 * pairs) as f64
}

/// Candidate with maximal |second difference| over interior points, first
/// maximum wins.
pub fn elbow_oracle(ks: &[usize], sse: &[f64]) -> usize {
    let curv: Vec<f64> = (1..ks.len() - 1)
        .map(|i| (sse[i - 1] - 2.0 * sse[i] + sse[i + 1]).abs())
        .collect();
    let best = curv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    ks[1 + curv.iter().position(|&c| c == best).unwrap()]
}

/// The five ratios computed straight from their definitions.
pub fn metrics_oracle(tp: u64, fp: u64, tn: u64, fn_: u64) -> [Option<f64>; 5] {
    let div = |a: u64, b: u64| if b == 0 { None } else { Some(a as f64 / b as f64) };
    let accuracy = div(tn + tp, tn + tp + fn_ + fp);
    let precision = div(tp, tp + fp);
    let recall = div(tp, tp + fn_);
    let f = match (precision, recall) {
        (Some(p), Some(r)) if p + r != 0.0 => Some(2.0 * (p * r) / (p + r)),
        _ => None,
    };
    let specificity = div(tn, tn + fp);
    [accuracy, precision, recall, f, specificity]
}

fn element(out: &mut Vec<u8>, group: u16, elem: u16, vr: &[u8; 2], value: &[u8]) {
    out.extend_from_slice(&group.to_le_bytes());
    out.extend_from_slice(&elem.to_le_bytes());
    out.extend_from_slice(vr);
    if matches!(vr, b"OB" | b"OW" | b"UN" | b"SQ" | b"UT") {
        out.extend_from_slice(&[0, 0]);
        out.extend_from_slice(&(value.len() as u32).to_le_bytes());
    } else {
        out.extend_from_slice(&(value.len() as u16).to_le_bytes());
    }
    out.extend_from_slice(value);
}

/// Stored values of [`handmade_dicom`], row-major.
pub const HANDMADE_VALUES: [i16; 6] = [-1000, -500, 0, 40, 240, 1200];

/// A 2x3 signed 16-bit MONOCHROME2 file assembled byte by byte, with window
/// 40/400, rescale 1/0 and a private tag the reader must skip.
pub fn handmade_dicom() -> Vec<u8> {
    let mut b = vec![0u8; 128];
    b.extend_from_slice(b"DICM");
    element(&mut b, 0x0002, 0x0000, b"UL", &28u32.to_le_bytes());
    element(&mut b, 0x0002, 0x0010, b"UI", b"1.2.840.10008.1.2.1\0");
    element(&mut b, 0x0008, 0x0060, b"CS", b"CT");
    element(&mut b, 0x0009, 0x0010, b"LO", b"VENDOR");
    element(&mut b, 0x0028, 0x0002, b"US", &1u16.to_le_bytes());
    element(&mut b, 0x0028, 0x0004, b"CS", b"MONOCHROME2 ");
    element(&mut b, 0x0028, 0x0010, b"US", &2u16.to_le_bytes());
    element(&mut b, 0x0028, 0x0011, b"US", &3u16.to_le_bytes());
    element(&mut b, 0x0028, 0x0100, b"US", &16u16.to_le_bytes());
    element(&mut b, 0x0028, 0x0103, b"US", &1u16.to_le_bytes());
    element(&mut b, 0x0028, 0x1050, b"DS", b"40");
    element(&mut b, 0x0028, 0x1051, b"DS", b"400 ");
    element(&mut b, 0x0028, 0x1052, b"DS", b"0 ");
    element(&mut b, 0x0028, 0x1053, b"DS", b"1 ");
    let px: Vec<u8> = HANDMADE_VALUES.iter().flat_map(|v| v.to_le_bytes()).collect();
    element(&mut b, 0x7FE0, 0x0010, b"OW", &px);
    b
}

/// Layer families covered by the gradient checks.
pub const LAYER_KINDS: [&str; 8] = [
    "conv",
    "batchnorm/train",
    "batchnorm/infer",
    "relu",
    "maxpool",
    "gap",
    "dense",
    "softmax",
];

fn small_shape(rng: &mut ChaCha8Rng, even: bool) -> Shape {
    let e = |rng: &mut ChaCha8Rng| {
        let v = rng.random_range(1..=4);
        if even {
            2 * v
        } else {
            v
        }
    };
    Shape::new(rng.random_range(1..=3), e(rng), e(rng), rng.random_range(1..=4))
}

/// Random layer of the given family with a compatible input and mode. Inputs
/// to ReLU and max pooling avoid their kinks.
pub fn layer_case(rng: &mut ChaCha8Rng, kind: &str) -> (Layer<f64>, Tensor<f64>, Mode) {
    match kind {
        "conv" => {
            let (c, x) = random_conv(rng, 7, 3);
            (Layer::Conv(c), x, Mode::Train)
        }
        "batchnorm/train" => {
            let mut s = small_shape(rng, false);
            s.n = s.n.max(2);
            (Layer::BatchNorm(random_batchnorm(rng, s.c)), random_tensor(rng, s), Mode::Train)
        }
        "batchnorm/infer" => {
            let s = small_shape(rng, false);
            (Layer::BatchNorm(random_batchnorm(rng, s.c)), random_tensor(rng, s), Mode::Infer)
        }
        "relu" => {
            let s = small_shape(rng, false);
            (Layer::Relu, kink_free_tensor(rng, s), Mode::Train)
        }
        "maxpool" => {
            let s = small_shape(rng, true);
            (Layer::MaxPool, kink_free_tensor(rng, s), Mode::Train)
        }
        "gap" => {
            let s = small_shape(rng, false);
            (Layer::Gap, random_tensor(rng, s), Mode::Train)
        }
        "dense" => {
            let (i, o) = (rng.random_range(1..=12), rng.random_range(1..=6));
            let n = rng.random_range(1..=3);
            (Layer::Dense(random_dense(rng, i, o)), random_tensor(rng, Shape::new(n, 1, 1, i)), Mode::Train)
        }
        "softmax" => {
            let s = Shape::new(rng.random_range(1..=3), 1, 1, rng.random_range(2..=5));
            let x = Tensor::from_vec(s, uniform_vec(rng, s.len(), -3.0, 3.0)).unwrap();
            (Layer::Softmax, x, Mode::Train)
        }
        other => panic!("unknown layer kind {other}"),
    }
}

/// Random probability vector bounded away from zero and a target class.
pub fn loss_case(rng: &mut ChaCha8Rng) -> (Vec<f64>, usize) {
    let c = rng.random_range(2..=4);
    let raw = uniform_vec(rng, c, 0.05, 1.0);
    let total: f64 = raw.iter().sum();
    (raw.iter().map(|v| v / total).collect(), rng.random_range(0..c))
}
