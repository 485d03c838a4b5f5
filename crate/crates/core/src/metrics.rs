//! Multi-label evaluation against ground-truth label sets.
//!
//! Thresholded predictions use a strict `f > threshold` test (default 0.5).
//! Rankings break ties toward the lower class index (top-k, argmax) or the
//! lower instance id (average precision). Average precision is the
//! non-interpolated area under the precision-recall curve, and classes with no
//! positive instance are left out of the mean.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::DenseMatrix;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// N×C confidences in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrix(DenseMatrix);

impl PredictionMatrix {
    pub fn new(confidences: DenseMatrix) -> Result<Self> {
        if let Some(&bad) = confidences
            .as_slice()
            .iter()
            .find(|v| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::domain(format!("confidence {bad} outside [0, 1]")));
        }
        Ok(Self(confidences))
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.0
    }

    pub fn num_instances(&self) -> usize {
        self.0.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.0.cols()
    }
}

/// Ground-truth label sets, each non-empty and in range.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSet {
    num_classes: usize,
    label_sets: Vec<Vec<usize>>,
}

impl EvalSet {
    pub fn new(num_classes: usize, label_sets: Vec<Vec<usize>>) -> Result<Self> {
        let mut label_sets = label_sets;
        for (i, set) in label_sets.iter_mut().enumerate() {
            if set.is_empty() {
                return Err(Error::domain(format!("instance {i} has an empty label set")));
            }
            if let Some(&bad) = set.iter().find(|&&c| c >= num_classes) {
                return Err(Error::domain(format!(
                    "instance {i}: class {bad} outside [0, {num_classes})"
                )));
            }
            set.sort_unstable();
            set.dedup();
        }
        Ok(Self {
            num_classes,
            label_sets,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.label_sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.label_sets.is_empty()
    }

    pub fn label_sets(&self) -> &[Vec<usize>] {
        &self.label_sets
    }
}

fn check(preds: &PredictionMatrix, gt: &EvalSet) -> Result<()> {
    if preds.num_instances() != gt.len() || preds.num_classes() != gt.num_classes() {
        return Err(Error::shape(format!(
            "predictions are {}x{}, ground truth has {} instances over {} classes",
            preds.num_instances(),
            preds.num_classes(),
            gt.len(),
            gt.num_classes()
        )));
    }
    if gt.is_empty() {
        return Err(Error::domain("evaluation set is empty"));
    }
    Ok(())
}

/// Class indices ordered by decreasing confidence, ties by ascending index.
fn ranked_classes(row: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    order
}

fn predicted_set(row: &[f64], threshold: f64) -> Vec<usize> {
    (0..row.len()).filter(|&c| row[c] > threshold).collect()
}

fn intersection(a: &[usize], b: &[usize]) -> usize {
    a.iter().filter(|c| b.contains(c)).count()
}

fn mean_over_instances(
    preds: &PredictionMatrix,
    gt: &EvalSet,
    score: impl Fn(&[f64], &[usize]) -> f64,
) -> Result<f64> {
    check(preds, gt)?;
    let total: f64 = preds
        .matrix()
        .iter_rows()
        .zip(gt.label_sets())
        .map(|(row, truth)| score(row, truth))
        .sum();
    Ok(total / gt.len() as f64)
}

/// Mean share of each ground-truth set recovered by the top-|set| classes.
pub fn top_set_ml(preds: &PredictionMatrix, gt: &EvalSet) -> Result<f64> {
    mean_over_instances(preds, gt, |row, truth| {
        let top = &ranked_classes(row)[..truth.len()];
        intersection(truth, top) as f64 / truth.len() as f64
    })
}

/// Mean indicator that the top-1 class is in the ground-truth set.
pub fn top1_ml(preds: &PredictionMatrix, gt: &EvalSet) -> Result<f64> {
    mean_over_instances(preds, gt, |row, truth| {
        f64::from(u8::from(truth.contains(&ranked_classes(row)[0])))
    })
}

pub fn iou_acc(preds: &PredictionMatrix, gt: &EvalSet, threshold: f64) -> Result<f64> {
    mean_over_instances(preds, gt, |row, truth| {
        let predicted = predicted_set(row, threshold);
        let inter = intersection(truth, &predicted);
        let union = truth.len() + predicted.len() - inter;
        inter as f64 / union as f64
    })
}

/// Per-instance Dice score `2|Y ∩ Ŷ| / (|Y| + |Ŷ|)`, averaged.
pub fn f1(preds: &PredictionMatrix, gt: &EvalSet, threshold: f64) -> Result<f64> {
    mean_over_instances(preds, gt, |row, truth| {
        let predicted = predicted_set(row, threshold);
        2.0 * intersection(truth, &predicted) as f64 / (truth.len() + predicted.len()) as f64
    })
}

/// Mean average precision and the per-class values (`None` for classes
/// without positives).
pub fn mean_ap(preds: &PredictionMatrix, gt: &EvalSet) -> Result<(f64, Vec<Option<f64>>)> {
    check(preds, gt)?;
    let (n, c) = (preds.num_instances(), preds.num_classes());
    let m = preds.matrix();
    let mut per_class = Vec::with_capacity(c);
    for class in 0..c {
        let positive: Vec<bool> = gt.label_sets().iter().map(|s| s.contains(&class)).collect();
        let num_pos = positive.iter().filter(|&&p| p).count();
        if num_pos == 0 {
            per_class.push(None);
            continue;
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| m.get(b, class).total_cmp(&m.get(a, class)).then(a.cmp(&b)));
        let mut hits = 0usize;
        let mut precision_sum = 0.0;
        for (rank, &i) in order.iter().enumerate() {
            if positive[i] {
                hits += 1;
                precision_sum += hits as f64 / (rank + 1) as f64;
            }
        }
        per_class.push(Some(precision_sum / num_pos as f64));
    }
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(Error::domain("no class has a positive instance"));
    }
    let map = present.iter().sum::<f64>() / present.len() as f64;
    Ok((map, per_class))
}

/// Mean number of classes above `threshold` per instance.
pub fn avg_predicted_positives(preds: &PredictionMatrix, threshold: f64) -> f64 {
    if preds.num_instances() == 0 {
        return 0.0;
    }
    let total: usize = preds
        .matrix()
        .iter_rows()
        .map(|row| row.iter().filter(|&&f| f > threshold).count())
        .sum();
    total as f64 / preds.num_instances() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub top_set_ml: f64,
    pub top1_ml: f64,
    pub iou_acc: f64,
    pub f1: f64,
    pub map: f64,
    pub avg_predicted_positives: f64,
    pub per_class_ap: Vec<Option<f64>>,
}

/// The five reported metrics, in table order.
pub const METRIC_NAMES: [&str; 5] = ["Top-set ML", "Top-1 ML", "IOU Acc.", "F1", "mAP"];

impl MetricsReport {
    pub fn compute(preds: &PredictionMatrix, gt: &EvalSet) -> Result<Self> {
        let (map, per_class_ap) = mean_ap(preds, gt)?;
        Ok(Self {
            top_set_ml: top_set_ml(preds, gt)?,
            top1_ml: top1_ml(preds, gt)?,
            iou_acc: iou_acc(preds, gt, DEFAULT_THRESHOLD)?,
            f1: f1(preds, gt, DEFAULT_THRESHOLD)?,
            map,
            avg_predicted_positives: avg_predicted_positives(preds, DEFAULT_THRESHOLD),
            per_class_ap,
        })
    }

    /// `[top_set_ml, top1_ml, iou_acc, f1, map]`.
    pub fn values(&self) -> [f64; 5] {
        [self.top_set_ml, self.top1_ml, self.iou_acc, self.f1, self.map]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialisation")
    }

    /// Single-row text table in percent.
    pub fn to_table(&self, label: &str) -> String {
        let mut out = table_header("Loss");
        let mut cells: Vec<String> =
            self.values().iter().map(|v| format!("{:.1}", 100.0 * v)).collect();
        cells.push(format!("{:.2}", self.avg_predicted_positives));
        out.push_str(&table_row(label, &cells));
        out
    }
}

const LABEL_WIDTH: usize = 12;
const CELL_WIDTH: usize = 13;

pub fn table_header(first: &str) -> String {
    let mut out = format!("{first:<LABEL_WIDTH$}");
    for name in METRIC_NAMES.iter().chain(std::iter::once(&"Avg. pos.")) {
        let _ = write!(out, " {name:>CELL_WIDTH$}");
    }
    out.push('\n');
    out
}

pub fn table_row(label: &str, cells: &[String]) -> String {
    let mut out = format!("{label:<LABEL_WIDTH$}");
    for cell in cells {
        let _ = write!(out, " {cell:>CELL_WIDTH$}");
    }
    out.push('\n');
    out
}
