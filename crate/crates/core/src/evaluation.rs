//! Confusion counts, the five summary metrics, and ROC analysis. Cancerous
//! is the positive class throughout.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Confusion counts from 0/1 vectors where 1 marks the positive class.
pub fn confusion(predictions: &[u8], truth: &[u8]) -> Result<ConfusionMatrix> {
    if predictions.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} predictions but {} labels",
            predictions.len(),
            truth.len()
        )));
    }
    let mut cm = ConfusionMatrix::default();
    for (i, (&p, &t)) in predictions.iter().zip(truth).enumerate() {
        match (p, t) {
            (1, 1) => cm.tp += 1,
            (1, 0) => cm.fp += 1,
            (0, 0) => cm.tn += 1,
            (0, 1) => cm.fn_ += 1,
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "entry {i} is ({p}, {t}); only 0 and 1 are allowed"
                )))
            }
        }
    }
    Ok(cm)
}

fn positive_bits(labels: &[Label]) -> Vec<u8> {
    labels.iter().map(|l| u8::from(l.is_positive())).collect()
}

pub fn confusion_from_labels(predictions: &[Label], truth: &[Label]) -> Result<ConfusionMatrix> {
    confusion(&positive_bits(predictions), &positive_bits(truth))
}

/// Each field is `None` when its denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    /// Also reported as sensitivity.
    pub recall: Option<f64>,
    pub f_score: Option<f64>,
    pub specificity: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn metrics(cm: &ConfusionMatrix) -> Metrics {
    let precision = ratio(cm.tp, cm.tp + cm.fp);
    let recall = ratio(cm.tp, cm.tp + cm.fn_);
    let f_score = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * (p * r) / (p + r)),
        _ => None,
    };
    Metrics {
        accuracy: ratio(cm.tn + cm.tp, cm.tn + cm.tp + cm.fn_ + cm.fp),
        precision,
        recall,
        f_score,
        specificity: ratio(cm.tn, cm.tn + cm.fp),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Samples with `score >= threshold` are called positive.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

impl RocCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("threshold,fpr,tpr\n");
        for p in &self.points {
            let _ = writeln!(s, "{},{},{}", p.threshold, p.fpr, p.tpr);
        }
        s
    }
}

/// ROC over `scores` (probability of cancer). Thresholds are `+inf`, every
/// distinct score in descending order, and `-inf`; equal scores enter
/// together. The trapezoid area is accumulated in integers and divided once.
pub fn roc_auc(scores: &[f64], truth: &[Label]) -> Result<RocCurve> {
    if scores.len() != truth.len() {
        return Err(Error::Shape(format!("{} scores but {} labels", scores.len(), truth.len())));
    }
    if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(Error::InvalidArgument(format!("score {s} is outside [0, 1]")));
    }
    let pos = truth.iter().filter(|l| l.is_positive()).count() as u64;
    let neg = truth.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidArgument("ROC analysis needs both classes present".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let point = |threshold: f64, fp: u64, tp: u64| RocPoint {
        threshold,
        fpr: fp as f64 / neg as f64,
        tpr: tp as f64 / pos as f64,
    };
    let mut points = vec![point(f64::INFINITY, 0, 0)];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut twice_area: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == s {
            if truth[order[i]].is_positive() {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        twice_area += (fp - fp0) as u128 * (tp + tp0) as u128;
        points.push(point(s, fp, tp));
    }
    points.push(point(f64::NEG_INFINITY, fp, tp));
    let auc = twice_area as f64 / (2 * pos as u128 * neg as u128) as f64;
    Ok(RocCurve { points, auc })
}

/// Integer percent, halves rounded up.
pub fn percent(v: f64) -> u64 {
    (v * 100.0 + 0.5 + 1e-9).floor() as u64
}

/// Column headers of the text report.
pub const REPORT_COLUMNS: [&str; 5] = ["Accuracy", "Sensitivity", "Precision", "F-Score", "Specificity"];

/// One metrics row per named split or head, in integer percents.
pub fn format_report(rows: &[(String, Metrics)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(6);
    let mut s = format!("{:<width$}", "Split");
    for c in REPORT_COLUMNS {
        let _ = write!(s, "  {c:>11}");
    }
    s.push('\n');
    let cell = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{}%", percent(x)));
    for (name, m) in rows {
        let _ = write!(s, "{name:<width$}");
        for v in [m.accuracy, m.recall, m.precision, m.f_score, m.specificity] {
            let _ = write!(s, "  {:>11}", cell(v));
        }
        s.push('\n');
    }
    s
}
