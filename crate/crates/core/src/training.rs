//! Stratified splitting, the ADAM optimizer and the mini-batch training loop.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Label};
use crate::error::{Error, Result};
use crate::layers::{Loss, Mode};
use crate::network::{Checkpoint, Msnn};
use crate::tensor::Scalar;

/// Split fractions for the four standard train/test regimes.
pub const STANDARD_FRACTIONS: [f64; 4] = [0.70, 0.75, 0.80, 0.85];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    pub loss: Loss,
    pub seed: u64,
    /// Fraction of each class assigned to training.
    pub fraction: f64,
    /// Validation cadence in iterations.
    pub val_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 20,
            epochs: 20,
            adam: AdamConfig::default(),
            loss: Loss::Mse,
            seed: 0,
            fraction: 0.75,
            val_every: 10,
        }
    }
}

fn check_fraction(f: f64) -> Result<()> {
    if f > 0.0 && f < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("split fraction {f} is not in (0, 1)")))
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        if self.val_every == 0 {
            return Err(Error::InvalidArgument("validation cadence must be at least 1".into()));
        }
        let a = &self.adam;
        if !(a.learning_rate > 0.0 && a.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate {} must be positive", a.learning_rate)));
        }
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.epsilon > 0.0) {
            return Err(Error::InvalidArgument("ADAM betas must lie in [0, 1) and epsilon be positive".into()));
        }
        check_fraction(self.fraction)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSplit {
    pub label: Label,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Reproducible stratified train/test partition of dataset indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub seed: u64,
    pub fraction: f64,
    pub total: usize,
    pub classes: Vec<ClassSplit>,
}

/// `round_half_up(fraction * n)`, kept inside `[1, n - 1]`.
///
/// The small offset absorbs representation error, so 0.7 * 185 rounds to 130
/// even though the product evaluates to 129.49999999999997.
pub fn train_count(fraction: f64, n: usize) -> usize {
    let raw = (fraction * n as f64 + 0.5 + 1e-9).floor() as usize;
    raw.clamp(1, n.saturating_sub(1).max(1))
}

pub fn split_dataset(labels: &[Label], fraction: f64, seed: u64) -> Result<SplitPlan> {
    check_fraction(fraction)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut classes = Vec::new();
    for label in Label::ALL {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == label).collect();
        if idx.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "class {label} has {} samples; at least 2 are needed to split",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        let k = train_count(fraction, idx.len());
        let mut test = idx.split_off(k);
        idx.sort_unstable();
        test.sort_unstable();
        classes.push(ClassSplit {
            label,
            train: idx,
            test,
        });
    }
    Ok(SplitPlan {
        seed,
        fraction,
        total: labels.len(),
        classes,
    })
}

impl SplitPlan {
    pub fn train_indices(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.classes.iter().flat_map(|c| c.train.iter().copied()).collect();
        v.sort_unstable();
        v
    }

    pub fn test_indices(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.classes.iter().flat_map(|c| c.test.iter().copied()).collect();
        v.sort_unstable();
        v
    }

    /// Checks that the plan partitions a dataset with these labels.
    pub fn validate(&self, labels: &[Label]) -> Result<()> {
        if self.total != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "split plan covers {} images, dataset has {}",
                self.total,
                labels.len()
            )));
        }
        let mut seen = vec![false; labels.len()];
        for c in &self.classes {
            for &i in c.train.iter().chain(&c.test) {
                if i >= labels.len() || seen[i] || labels[i] != c.label {
                    return Err(Error::InvalidArgument(format!("split plan index {i} is invalid for this dataset")));
                }
                seen[i] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidArgument("split plan does not cover every image".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("split plan: {e}")))
    }
}

/// First and second moment estimates for every parameter buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T: Scalar> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(sizes: impl IntoIterator<Item = usize>) -> Self {
        let m: Vec<Vec<T>> = sizes.into_iter().map(|n| vec![T::zero(); n]).collect();
        Self { v: m.clone(), m, t: 0 }
    }
}

/// One bias-corrected ADAM update of every buffer in place.
pub fn adam_step<T: Scalar>(
    params: &mut [&mut [T]],
    grads: &[Vec<T>],
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "{} parameter buffers, {} gradients, {} optimizer slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.m[i].len() {
            return Err(Error::Shape(format!(
                "buffer {i}: {} parameters, {} gradients, {} optimizer entries",
                p.len(),
                g.len(),
                state.m[i].len()
            )));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let b1 = T::from_f64(cfg.beta1);
    let b2 = T::from_f64(cfg.beta2);
    let c1 = T::from_f64(1.0 - cfg.beta1.powi(t));
    let c2 = T::from_f64(1.0 - cfg.beta2.powi(t));
    let lr = T::from_f64(cfg.learning_rate);
    let eps = T::from_f64(cfg.epsilon);
    let one = T::one();
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for j in 0..p.len() {
            m[j] = b1 * m[j] + (one - b1) * g[j];
            v[j] = b2 * v[j] + (one - b2) * g[j] * g[j];
            let mhat = m[j] / c1;
            let vhat = v[j] / c2;
            p[j] = p[j] - lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    /// Percent.
    pub train_acc: f64,
    pub train_loss: f64,
    /// Percent; present on validation iterations only.
    pub val_acc: Option<f64>,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingCurves {
    pub points: Vec<CurvePoint>,
}

impl TrainingCurves {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,train_acc,train_loss,val_acc,val_loss\n");
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        for p in &self.points {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                p.iteration,
                p.train_acc,
                p.train_loss,
                opt(p.val_acc),
                opt(p.val_loss)
            );
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub net: Msnn<f32>,
    pub checkpoint: Checkpoint,
    pub curves: TrainingCurves,
}

/// Index of the largest probability; the first wins on ties.
pub fn argmax(p: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Inference-mode class probabilities for the given images, in chunks.
pub fn predict_indices(net: &Msnn<f32>, data: &Dataset, indices: &[usize], chunk: usize) -> Result<Vec<Vec<f32>>> {
    let mut out = Vec::with_capacity(indices.len());
    for part in indices.chunks(chunk.max(1)) {
        let probs = net.predict(&data.batch(part)?)?;
        for i in 0..part.len() {
            out.push(probs.sample(i).to_vec());
        }
    }
    Ok(out)
}

/// Accuracy (percent) and mean loss over the given images.
pub fn evaluate_indices(
    net: &Msnn<f32>,
    data: &Dataset,
    indices: &[usize],
    loss: Loss,
    chunk: usize,
) -> Result<(f64, f64)> {
    if indices.is_empty() {
        return Err(Error::InvalidArgument("nothing to evaluate".into()));
    }
    let probs = predict_indices(net, data, indices, chunk)?;
    let targets = data.class_targets(indices);
    let mut correct = 0usize;
    let mut total = 0.0f64;
    for (p, &t) in probs.iter().zip(&targets) {
        correct += usize::from(argmax(p) == t);
        total += loss.value(p, t).as_f64();
    }
    let n = indices.len() as f64;
    Ok((100.0 * correct as f64 / n, total / n))
}

/// Mini-batch ADAM training on the plan's training images, validating on its
/// test images every `val_every` iterations and after the last iteration.
pub fn train(mut net: Msnn<f32>, data: &Dataset, plan: &SplitPlan, cfg: &TrainConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    plan.validate(&data.labels)?;
    if data.extent != net.spec().input_extent {
        return Err(Error::Shape(format!(
            "images have extent {}, network expects {}",
            data.extent,
            net.spec().input_extent
        )));
    }
    let mut order = plan.train_indices();
    let test = plan.test_indices();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut state = AdamState::<f32>::new(net.params().iter().map(|p| p.len()));
    let per_epoch = order.len().div_ceil(cfg.batch_size);
    let last = per_epoch * cfg.epochs;
    let mut curves = TrainingCurves::default();
    let mut iteration = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            iteration += 1;
            let x = data.batch(batch)?;
            let targets = data.class_targets(batch);
            let fwd = net.forward(&x, Mode::Train, &[])?;
            let (loss, grad) = cfg.loss.batch(&fwd.probs, &targets)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss is {loss} at epoch {}, iteration {iteration}",
                    epoch + 1
                )));
            }
            let correct = (0..batch.len())
                .filter(|&i| argmax(fwd.probs.sample(i)) == targets[i])
                .count();
            net.update_running_stats(&fwd);
            let grads = net.backward(fwd, &grad)?;
            let flat: Vec<Vec<f32>> = grads.layers.into_iter().flatten().collect();
            if flat.iter().flatten().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient is non-finite at epoch {}, iteration {iteration}",
                    epoch + 1
                )));
            }
            adam_step(&mut net.params_mut(), &flat, &mut state, &cfg.adam)?;
            let mut point = CurvePoint {
                iteration,
                train_acc: 100.0 * correct as f64 / batch.len() as f64,
                train_loss: loss as f64,
                val_acc: None,
                val_loss: None,
            };
            if !test.is_empty() && (iteration % cfg.val_every == 0 || iteration == last) {
                let (acc, vloss) = evaluate_indices(&net, data, &test, cfg.loss, cfg.batch_size)?;
                point.val_acc = Some(acc);
                point.val_loss = Some(vloss);
            }
            curves.points.push(point);
        }
    }
    let checkpoint = net.to_checkpoint(cfg.seed, cfg.epochs as u32);
    Ok(TrainOutput {
        net,
        checkpoint,
        curves,
    })
}
