//! The MSNN layer stack: construction, batched forward/backward, parameter
//! accounting and checkpoints.

mod checkpoint;
mod spec;

pub use checkpoint::{Checkpoint, LayerBlob, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use spec::{ActShape, LayerSpec, NetworkSpec, CANONICAL_EXTENT, FEATURE_WIDTH, NUM_CLASSES, POOL_STAGES};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::layers::{BatchNorm, Conv2d, Dense, Layer, Mode, Tape};
use crate::tensor::{Scalar, Shape, Tensor};

/// One row of the parameter table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParamRow {
    pub index: usize,
    pub layer: &'static str,
    pub output_shape: ActShape,
    pub filters: Option<usize>,
    pub filter_size: Option<usize>,
    pub learnable: usize,
    pub tracked: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParamReport {
    pub input_extent: usize,
    pub rows: Vec<ParamRow>,
    pub total_learnable: usize,
    pub total_tracked: usize,
}

impl ParamReport {
    /// Aligned text table.
    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{:<4} {:<12} {:<16} {:>8} {:>8} {:>12} {:>8}\n",
            "#", "Layer", "Output shape", "Filters", "Size", "Parameters", "Tracked"
        );
        for r in &self.rows {
            let filters = r.filters.map_or("-".to_string(), |v| v.to_string());
            let size = r.filter_size.map_or("-".to_string(), |v| format!("{v}x{v}"));
            s.push_str(&format!(
                "{:<4} {:<12} {:<16} {:>8} {:>8} {:>12} {:>8}\n",
                r.index + 1,
                r.layer,
                r.output_shape.to_string(),
                filters,
                size,
                r.learnable,
                r.tracked
            ));
        }
        s.push_str(&format!(
            "total learnable {}  tracked {}\n",
            self.total_learnable, self.total_tracked
        ));
        s
    }
}

/// Result of a forward pass.
#[derive(Debug)]
pub struct Forward<T: Scalar> {
    /// `[N,1,1,2]` class probabilities; class 0 is cancerous.
    pub probs: Tensor<T>,
    /// Requested intermediate outputs, keyed by layer index.
    pub captures: Vec<(usize, Tensor<T>)>,
    tapes: Vec<Option<Tape<T>>>,
}

impl<T: Scalar> Forward<T> {
    pub fn capture(&self, layer: usize) -> Option<&Tensor<T>> {
        self.captures.iter().find(|(i, _)| *i == layer).map(|(_, t)| t)
    }
}

/// Per-layer parameter gradients plus the gradient with respect to the input.
#[derive(Debug, Clone)]
pub struct Gradients<T: Scalar> {
    pub layers: Vec<Vec<Vec<T>>>,
    pub input: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Msnn<T: Scalar = f32> {
    spec: NetworkSpec,
    layers: Vec<Layer<T>>,
}

impl<T: Scalar> Msnn<T> {
    /// Network with zero weights, unit BN scale and running stats (0, 1).
    pub fn new(spec: NetworkSpec) -> Self {
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (ls, input) in spec.layers.iter().zip(spec.input_shapes()) {
            layers.push(match *ls {
                LayerSpec::Conv { filters, size } => Layer::Conv(Conv2d::same(size, size, input.c, filters)),
                LayerSpec::BatchNorm => Layer::BatchNorm(BatchNorm::new(input.c)),
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::MaxPool => Layer::MaxPool,
                LayerSpec::Gap => Layer::Gap,
                LayerSpec::Fc { units } => Layer::Dense(Dense::zeros(input.h * input.w * input.c, units)),
                LayerSpec::Softmax => Layer::Softmax,
            });
        }
        Self { spec, layers }
    }

    /// Zero-mean Gaussian weights with std `sqrt(2 / fan_in)`, zero biases.
    pub fn initialized(spec: NetworkSpec, seed: u64) -> Self {
        let mut net = Self::new(spec);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut net.layers {
            let (weights, fan_in) = match layer {
                Layer::Conv(c) => (&mut c.weights, c.filter_h * c.filter_w * c.in_c),
                Layer::Dense(d) => (&mut d.weights, d.in_dim),
                _ => continue,
            };
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            for w in weights.iter_mut() {
                *w = T::from_f64(normal.sample(&mut rng));
            }
        }
        net
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn cast<U: Scalar>(&self) -> Msnn<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::from_f64(x.as_f64())).collect::<Vec<U>>();
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Conv(c) => Layer::Conv(Conv2d {
                    filter_h: c.filter_h,
                    filter_w: c.filter_w,
                    in_c: c.in_c,
                    out_c: c.out_c,
                    stride: c.stride,
                    pad: c.pad,
                    weights: conv(&c.weights),
                    bias: conv(&c.bias),
                }),
                Layer::BatchNorm(b) => Layer::BatchNorm(BatchNorm {
                    gamma: conv(&b.gamma),
                    beta: conv(&b.beta),
                    running_mean: conv(&b.running_mean),
                    running_var: conv(&b.running_var),
                    epsilon: U::from_f64(b.epsilon.as_f64()),
                    momentum: U::from_f64(b.momentum.as_f64()),
                }),
                Layer::Dense(d) => Layer::Dense(Dense {
                    in_dim: d.in_dim,
                    out_dim: d.out_dim,
                    weights: conv(&d.weights),
                    bias: conv(&d.bias),
                }),
                Layer::Relu => Layer::Relu,
                Layer::MaxPool => Layer::MaxPool,
                Layer::Gap => Layer::Gap,
                Layer::Softmax => Layer::Softmax,
            })
            .collect();
        Msnn {
            spec: self.spec.clone(),
            layers,
        }
    }

    pub fn param_report(&self) -> ParamReport {
        let shapes = self.spec.shapes();
        let rows: Vec<ParamRow> = self
            .spec
            .layers
            .iter()
            .zip(&self.layers)
            .zip(shapes)
            .enumerate()
            .map(|(index, ((ls, layer), output_shape))| {
                let (filters, filter_size) = match *ls {
                    LayerSpec::Conv { filters, size } => (Some(filters), Some(size)),
                    _ => (None, None),
                };
                ParamRow {
                    index,
                    layer: ls.table_name(),
                    output_shape,
                    filters,
                    filter_size,
                    learnable: layer.learnable_count(),
                    tracked: layer.tracked_count(),
                }
            })
            .collect();
        ParamReport {
            input_extent: self.spec.input_extent,
            total_learnable: rows.iter().map(|r| r.learnable).sum(),
            total_tracked: rows.iter().map(|r| r.tracked).sum(),
            rows,
        }
    }

    fn check_input(&self, batch: &Tensor<T>) -> Result<()> {
        let s = batch.shape();
        let e = self.spec.input_extent;
        if (s.h, s.w, s.c) != (e, e, self.spec.channels) || s.n == 0 {
            return Err(Error::Shape(format!(
                "network expects [N,{e},{e},{}] input, got {s}",
                self.spec.channels
            )));
        }
        Ok(())
    }

    /// Runs every layer. Tapes are kept in train mode so that
    /// [`Msnn::backward`] can follow; `capture` lists layer indices whose
    /// outputs should be returned.
    pub fn forward(&self, batch: &Tensor<T>, mode: Mode, capture: &[usize]) -> Result<Forward<T>> {
        self.check_input(batch)?;
        batch.check_finite("network input")?;
        let keep = mode == Mode::Train;
        let mut tapes = Vec::with_capacity(self.layers.len());
        let mut captures = Vec::new();
        let mut x = batch.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let (y, tape) = layer.forward(&x, mode, keep)?;
            y.check_finite(&format!("output of layer {} ({})", i + 1, layer.kind()))?;
            if capture.contains(&i) {
                captures.push((i, y.clone()));
            }
            tapes.push(tape);
            x = y;
        }
        Ok(Forward {
            probs: x,
            captures,
            tapes,
        })
    }

    /// Inference-mode class probabilities, `[N,1,1,2]`.
    pub fn predict(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward(batch, Mode::Infer, &[])?.probs)
    }

    /// Folds the batch statistics recorded by a train-mode forward pass into
    /// every batch-norm layer's running statistics.
    pub fn update_running_stats(&mut self, fwd: &Forward<T>) {
        for (layer, tape) in self.layers.iter_mut().zip(&fwd.tapes) {
            if let (Layer::BatchNorm(bn), Some(Tape::BatchNorm { mode: Mode::Train, batch_mean, batch_var, .. })) =
                (layer, tape)
            {
                bn.update_running(batch_mean, batch_var);
            }
        }
    }

    /// Backpropagates `grad_probs` (d loss / d probabilities) through a
    /// train-mode forward pass.
    pub fn backward(&self, fwd: Forward<T>, grad_probs: &Tensor<T>) -> Result<Gradients<T>> {
        if grad_probs.shape() != fwd.probs.shape() {
            return Err(Error::Shape(format!(
                "gradient {} does not match output {}",
                grad_probs.shape(),
                fwd.probs.shape()
            )));
        }
        let mut grads = vec![Vec::new(); self.layers.len()];
        let mut g = grad_probs.clone();
        for (i, (layer, tape)) in self.layers.iter().zip(fwd.tapes).enumerate().rev() {
            let tape = tape.ok_or_else(|| {
                Error::TapeMismatch(format!("layer {} has no tape; run forward in train mode", i + 1))
            })?;
            let (dx, dp) = layer.backward(tape, &g)?;
            grads[i] = dp;
            g = dx;
        }
        Ok(Gradients { layers: grads, input: g })
    }

    /// Mutable access to every learnable buffer, in layer order.
    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn params(&self) -> Vec<&[T]> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    /// Batch tensor shape for `n` inputs.
    pub fn input_shape(&self, n: usize) -> Shape {
        let e = self.spec.input_extent;
        Shape::new(n, e, e, self.spec.channels)
    }
}

impl Msnn<f32> {
    pub fn to_checkpoint(&self, seed: u64, epochs_completed: u32) -> Checkpoint {
        let blobs = self
            .spec
            .layers
            .iter()
            .zip(&self.layers)
            .map(|(ls, layer)| {
                let mut values = Vec::new();
                match layer {
                    Layer::Conv(c) => {
                        values.extend_from_slice(&c.weights);
                        values.extend_from_slice(&c.bias);
                    }
                    Layer::BatchNorm(b) => {
                        values.extend_from_slice(&b.gamma);
                        values.extend_from_slice(&b.beta);
                        values.extend_from_slice(&b.running_mean);
                        values.extend_from_slice(&b.running_var);
                    }
                    Layer::Dense(d) => {
                        values.extend_from_slice(&d.weights);
                        values.extend_from_slice(&d.bias);
                    }
                    _ => {}
                }
                LayerBlob { kind: ls.code(), values }
            })
            .collect();
        Checkpoint {
            input_extent: self.spec.input_extent as u32,
            fingerprint: self.spec.fingerprint(),
            seed,
            epochs_completed,
            blobs,
        }
    }

    /// Rebuilds the network from a checkpoint. When `expected` is given the
    /// checkpoint must have been produced from that exact spec.
    pub fn from_checkpoint(ckpt: &Checkpoint, expected: Option<&NetworkSpec>) -> Result<Self> {
        if let Some(spec) = expected {
            if spec.fingerprint() != ckpt.fingerprint {
                return Err(Error::FingerprintMismatch(format!(
                    "checkpoint was built for extent {}, expected network has extent {}",
                    ckpt.input_extent, spec.input_extent
                )));
            }
        }
        let spec = NetworkSpec::msnn(ckpt.input_extent as usize)
            .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
        if spec.fingerprint() != ckpt.fingerprint {
            return Err(Error::FingerprintMismatch(
                "stored fingerprint does not match any known network layout".into(),
            ));
        }
        if ckpt.blobs.len() != spec.layers.len() {
            return Err(Error::CorruptCheckpoint(format!(
                "{} layer blobs, expected {}",
                ckpt.blobs.len(),
                spec.layers.len()
            )));
        }
        let mut net = Self::new(spec);
        for (i, ((layer, ls), blob)) in net
            .layers
            .iter_mut()
            .zip(&net.spec.layers)
            .zip(&ckpt.blobs)
            .enumerate()
        {
            if blob.kind != ls.code() {
                return Err(Error::CorruptCheckpoint(format!("layer {} has kind {}", i + 1, blob.kind)));
            }
            let mut bufs: Vec<&mut Vec<f32>> = match layer {
                Layer::Conv(c) => vec![&mut c.weights, &mut c.bias],
                Layer::BatchNorm(b) => vec![&mut b.gamma, &mut b.beta, &mut b.running_mean, &mut b.running_var],
                Layer::Dense(d) => vec![&mut d.weights, &mut d.bias],
                _ => vec![],
            };
            let want: usize = bufs.iter().map(|b| b.len()).sum();
            if blob.values.len() != want {
                return Err(Error::CorruptCheckpoint(format!(
                    "layer {} holds {} values, expected {want}",
                    i + 1,
                    blob.values.len()
                )));
            }
            let mut off = 0;
            for b in bufs.iter_mut() {
                let n = b.len();
                b.copy_from_slice(&blob.values[off..off + n]);
                off += n;
            }
            if blob.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::CorruptCheckpoint(format!("layer {} holds non-finite values", i + 1)));
            }
        }
        if let Some(Layer::BatchNorm(b)) = net.layers.iter().find(|l| match l {
            Layer::BatchNorm(b) => b.running_var.iter().any(|&v| v < 0.0),
            _ => false,
        }) {
            return Err(Error::CorruptCheckpoint(format!(
                "negative running variance in a {}-channel batch norm",
                b.channels()
            )));
        }
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_shapes_and_counts() {
        let net = Msnn::<f32>::new(NetworkSpec::msnn(512).unwrap());
        let report = net.param_report();
        let conv_fc: Vec<usize> = report
            .rows
            .iter()
            .filter(|r| r.layer == "Conv" || r.layer == "FC")
            .map(|r| r.learnable)
            .collect();
        assert_eq!(conv_fc, vec![296, 1168, 4640, 18496, 73856, 295168, 131584, 1026]);
        assert_eq!(conv_fc.iter().sum::<usize>(), 526_234);
    }

    #[test]
    fn batch_norm_counts_are_two_c() {
        let net = Msnn::<f32>::new(NetworkSpec::msnn(64).unwrap());
        for r in net.param_report().rows.iter().filter(|r| r.layer == "BN") {
            assert_eq!(r.learnable, 2 * r.output_shape.c);
            assert_eq!(r.tracked, 2 * r.output_shape.c);
        }
    }

    #[test]
    fn rejects_wrong_input_shape() {
        let net = Msnn::<f32>::initialized(NetworkSpec::msnn(32).unwrap(), 0);
        let x = Tensor::zeros(Shape::new(1, 64, 64, 1));
        assert!(matches!(net.predict(&x), Err(Error::Shape(_))));
    }

    #[test]
    fn backward_requires_train_tapes() {
        let net = Msnn::<f32>::initialized(NetworkSpec::msnn(32).unwrap(), 0);
        let x = Tensor::full(net.input_shape(2), 0.5);
        let fwd = net.forward(&x, Mode::Infer, &[]).unwrap();
        let g = Tensor::zeros(fwd.probs.shape());
        assert!(matches!(net.backward(fwd, &g), Err(Error::TapeMismatch(_))));
    }

    #[test]
    fn init_is_seeded() {
        let spec = NetworkSpec::msnn(32).unwrap();
        let a = Msnn::<f32>::initialized(spec.clone(), 4);
        let b = Msnn::<f32>::initialized(spec.clone(), 4);
        let c = Msnn::<f32>::initialized(spec, 5);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
