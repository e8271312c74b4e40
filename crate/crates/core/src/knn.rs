//! k-nearest-neighbor classification of learned FC features, and elbow
//! selection of k.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Label};
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::network::Msnn;

/// Post-ReLU activations of the 512-unit dense stage for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub id: String,
    pub values: Vec<f32>,
}

/// Infer-mode features for the selected images.
pub fn extract_features(net: &Msnn<f32>, data: &Dataset, indices: &[usize], chunk: usize) -> Result<Vec<FeatureVector>> {
    if data.extent != net.spec().input_extent {
        return Err(Error::Shape(format!(
            "images have extent {}, network expects {}",
            data.extent,
            net.spec().input_extent
        )));
    }
    let layer = net.spec().feature_index();
    let mut out = Vec::with_capacity(indices.len());
    for part in indices.chunks(chunk.max(1)) {
        let fwd = net.forward(&data.batch(part)?, Mode::Infer, &[layer])?;
        let feats = fwd.capture(layer).expect("feature layer captured");
        for (j, &i) in part.iter().enumerate() {
            out.push(FeatureVector {
                id: data.records[i].id.clone(),
                values: feats.sample(j).to_vec(),
            });
        }
    }
    Ok(out)
}

/// `image_id,f0,..,f{d-1},label` rows.
pub fn features_to_csv(features: &[FeatureVector], labels: &[Label]) -> String {
    let dim = features.first().map_or(0, |f| f.values.len());
    let mut s = String::from("image_id");
    for j in 0..dim {
        let _ = write!(s, ",f{j}");
    }
    s.push_str(",label\n");
    for (f, l) in features.iter().zip(labels) {
        s.push_str(&f.id);
        for v in &f.values {
            let _ = write!(s, ",{v}");
        }
        let _ = writeln!(s, ",{l}");
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnnPrediction {
    pub label: Label,
    /// Winning votes divided by k.
    pub vote_fraction: f64,
    /// Share of the k neighbors that are cancerous.
    pub positive_fraction: f64,
}

/// Brute-force Euclidean k-NN over a fixed training set.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnModel {
    features: Vec<Vec<f32>>,
    labels: Vec<Label>,
    k: usize,
}

impl KnnModel {
    /// Odd `k` only, so two-class votes cannot tie.
    pub fn new(features: Vec<Vec<f32>>, labels: Vec<Label>, k: usize) -> Result<Self> {
        if k % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "k = {k} is even; use KnnModel::with_even_k to accept vote ties"
            )));
        }
        Self::with_even_k(features, labels, k)
    }

    /// Any `k ≥ 1`. Tied votes go to the lower class index (cancerous).
    pub fn with_even_k(features: Vec<Vec<f32>>, labels: Vec<Label>, k: usize) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} feature vectors but {} labels",
                features.len(),
                labels.len()
            )));
        }
        if k == 0 || k > features.len() {
            return Err(Error::InvalidArgument(format!(
                "k = {k} must lie in [1, {}] (training set size)",
                features.len()
            )));
        }
        let dim = features[0].len();
        if features.iter().any(|f| f.len() != dim) {
            return Err(Error::Shape("feature vectors differ in length".into()));
        }
        if features.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("training feature".into()));
        }
        Ok(Self { features, labels, k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Indices of the `k` nearest training vectors, nearest first. Equal
    /// distances order by training index.
    pub fn neighbors(&self, query: &[f32]) -> Result<Vec<usize>> {
        Ok(nearest(&self.features, query, self.k)?.into_iter().map(|(_, i)| i).collect())
    }

    pub fn predict(&self, query: &[f32]) -> Result<KnnPrediction> {
        let nb = self.neighbors(query)?;
        let pos = nb.iter().filter(|&&i| self.labels[i].is_positive()).count();
        let neg = self.k - pos;
        let (label, votes) = if pos >= neg {
            (Label::Cancerous, pos)
        } else {
            (Label::NonCancerous, neg)
        };
        Ok(KnnPrediction {
            label,
            vote_fraction: votes as f64 / self.k as f64,
            positive_fraction: pos as f64 / self.k as f64,
        })
    }

    pub fn predict_many(&self, queries: &[Vec<f32>]) -> Result<Vec<KnnPrediction>> {
        queries.par_iter().map(|q| self.predict(q)).collect()
    }
}

fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

/// `(distance², index)` of the `k` nearest points, ascending.
fn nearest(points: &[Vec<f32>], query: &[f32], k: usize) -> Result<Vec<(f64, usize)>> {
    let dim = points.first().map_or(0, |p| p.len());
    if query.len() != dim {
        return Err(Error::Shape(format!("query has {} features, model has {dim}", query.len())));
    }
    if query.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("query feature".into()));
    }
    let mut d: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| (squared_distance(p, query), i))
        .collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d.truncate(k);
    Ok(d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElbowCurve {
    pub ks: Vec<usize>,
    pub sse: Vec<f64>,
    pub selected: usize,
}

impl ElbowCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("k,sse\n");
        for (k, e) in self.ks.iter().zip(&self.sse) {
            let _ = writeln!(s, "{k},{e}");
        }
        s
    }
}

fn check_candidates(ks: &[usize]) -> Result<()> {
    if ks.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "elbow selection needs at least 3 candidate k values, got {}",
            ks.len()
        )));
    }
    if ks[0] == 0 || ks.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("candidate k values must be positive and strictly increasing".into()));
    }
    Ok(())
}

/// Candidate at the largest discrete curvature
/// `|e[i-1] - 2 e[i] + e[i+1]|` over interior points; ties go to the smaller k.
pub fn elbow_from_sse(ks: &[usize], sse: &[f64]) -> Result<usize> {
    check_candidates(ks)?;
    if ks.len() != sse.len() {
        return Err(Error::Shape(format!("{} k values but {} SSE values", ks.len(), sse.len())));
    }
    let mut best = 1;
    let mut best_c = f64::NEG_INFINITY;
    for i in 1..ks.len() - 1 {
        let c = (sse[i - 1] - 2.0 * sse[i] + sse[i + 1]).abs();
        if c > best_c {
            best_c = c;
            best = i;
        }
    }
    Ok(ks[best])
}

/// SSE of the neighbor-vote probability on a validation set for each
/// candidate k: `Σ (y - p̂_k)²` with `y = 1` for cancerous and `p̂_k` the share
/// of cancerous labels among the k nearest training vectors.
pub fn elbow_select_k(
    train_features: &[Vec<f32>],
    train_labels: &[Label],
    val_features: &[Vec<f32>],
    val_labels: &[Label],
    candidates: &[usize],
) -> Result<ElbowCurve> {
    check_candidates(candidates)?;
    let kmax = *candidates.last().unwrap();
    if train_features.len() != train_labels.len() || val_features.len() != val_labels.len() {
        return Err(Error::Shape("features and labels differ in length".into()));
    }
    if kmax > train_features.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {kmax} exceeds training set size {}",
            train_features.len()
        )));
    }
    let neighbor_lists = val_features
        .par_iter()
        .map(|q| nearest(train_features, q, kmax))
        .collect::<Result<Vec<_>>>()?;
    let sse: Vec<f64> = candidates
        .iter()
        .map(|&k| {
            neighbor_lists
                .iter()
                .zip(val_labels)
                .map(|(nb, l)| {
                    let pos = nb[..k].iter().filter(|(_, i)| train_labels[*i].is_positive()).count();
                    let p = pos as f64 / k as f64;
                    let y = if l.is_positive() { 1.0 } else { 0.0 };
                    (y - p) * (y - p)
                })
                .sum()
        })
        .collect();
    let selected = elbow_from_sse(candidates, &sse)?;
    Ok(ElbowCurve {
        ks: candidates.to_vec(),
        sse,
        selected,
    })
}
