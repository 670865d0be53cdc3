//! Confusion-matrix accumulation and the class- and task-level segmentation
//! metrics (precision, recall, F1, IoU), plus per-element corrosion shares.

use image::GrayImage;
use serde::{Deserialize, Serialize};

use crate::datamodel::catalog::{CORROSION, NUM_DEFECT_CLASSES, NUM_ELEMENT_CLASSES};
use crate::datamodel::labels::split_merged;
use crate::error::{Error, Result};

/// `counts[i][j]` = pixels with ground truth `i` predicted as `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != classes * classes {
            return Err(Error::Shape(format!(
                "{} counts for a {classes}×{classes} matrix",
                counts.len()
            )));
        }
        Ok(Self { classes, counts })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        self.counts[truth * self.classes..(truth + 1) * self.classes]
            .iter()
            .sum()
    }

    pub fn col_sum(&self, pred: usize) -> u64 {
        (0..self.classes).map(|i| self.get(i, pred)).sum()
    }

    /// Adds one pixel pair per position.
    pub fn accumulate(&mut self, pred: &[u8], truth: &[u8]) -> Result<()> {
        if pred.len() != truth.len() {
            return Err(Error::Shape(format!(
                "{} predictions vs {} ground-truth pixels",
                pred.len(),
                truth.len()
            )));
        }
        let k = self.classes;
        if let Some(&v) = pred.iter().chain(truth).find(|&&v| v as usize >= k) {
            return Err(Error::ClassOutOfRange {
                value: v as usize,
                classes: k,
            });
        }
        for (&p, &t) in pred.iter().zip(truth) {
            self.counts[t as usize * k + p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::Shape(format!(
                "cannot merge {}-class and {}-class matrices",
                self.classes, other.classes
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

/// Adds `pred`/`gt` pixel pairs to `cm`.
pub fn accumulate_confusion(
    pred: &GrayImage,
    gt: &GrayImage,
    cm: &mut ConfusionMatrix,
) -> Result<()> {
    if pred.dimensions() != gt.dimensions() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs ground truth {:?}",
            pred.dimensions(),
            gt.dimensions()
        )));
    }
    cm.accumulate(pred.as_raw(), gt.as_raw())
}

/// Metrics of one class; `None` marks a 0/0 quotient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetric {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub iou: Option<f64>,
    /// Ground-truth pixel count.
    pub support: u64,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Per-class precision, recall, F1 and IoU from a confusion matrix.
///
/// F1 is computed as `2TP / (2TP + FP + FN)`, which equals the harmonic mean
/// of precision and recall whenever both are defined and stays defined when
/// a class has no true positives.
pub fn class_metrics(cm: &ConfusionMatrix) -> Vec<ClassMetric> {
    (0..cm.classes())
        .map(|k| {
            let tp = cm.get(k, k);
            let fp = cm.col_sum(k) - tp;
            let fn_ = cm.row_sum(k) - tp;
            ClassMetric {
                precision: ratio(tp, tp + fp),
                recall: ratio(tp, tp + fn_),
                f1: ratio(2 * tp, 2 * tp + fp + fn_),
                iou: ratio(tp, tp + fp + fn_),
                support: tp + fn_,
            }
        })
        .collect()
}

/// Class metrics plus their unweighted means over defined classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub classes: Vec<ClassMetric>,
    pub m_precision: f64,
    pub m_recall: f64,
    pub m_f1: f64,
    pub m_iou: f64,
}

impl TaskReport {
    /// `[mIoU, mPrecision, mRecall, mF1]`, the column order of comparison tables.
    pub fn headline(&self) -> [f64; 4] {
        [self.m_iou, self.m_precision, self.m_recall, self.m_f1]
    }
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values
        .flatten()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn mean_metrics(classes: &[ClassMetric]) -> Result<TaskReport> {
    let m = |f: fn(&ClassMetric) -> Option<f64>, name: &str| {
        mean_defined(classes.iter().map(f))
            .ok_or_else(|| Error::Validation(format!("no class has a defined {name}")))
    };
    Ok(TaskReport {
        classes: classes.to_vec(),
        m_precision: m(|c| c.precision, "precision")?,
        m_recall: m(|c| c.recall, "recall")?,
        m_f1: m(|c| c.f1, "F1")?,
        m_iou: m(|c| c.iou, "IoU")?,
    })
}

pub fn task_report(cm: &ConfusionMatrix) -> Result<TaskReport> {
    mean_metrics(&class_metrics(cm))
}

/// Scores a merged-taxonomy prediction on both tasks by splitting it into
/// element and defect maps first. Returns `(element, defect)` reports.
pub fn merged_to_task_reports(
    merged_pred: &GrayImage,
    gt_element: &GrayImage,
    gt_defect: &GrayImage,
) -> Result<(TaskReport, TaskReport)> {
    let (ce, cd) = merged_confusions(merged_pred, gt_element, gt_defect)?;
    Ok((task_report(&ce)?, task_report(&cd)?))
}

/// Confusion matrices of a merged prediction's element and defect projections.
pub fn merged_confusions(
    merged_pred: &GrayImage,
    gt_element: &GrayImage,
    gt_defect: &GrayImage,
) -> Result<(ConfusionMatrix, ConfusionMatrix)> {
    let (pe, pd) = split_merged(merged_pred)?;
    let mut ce = ConfusionMatrix::new(NUM_ELEMENT_CLASSES);
    let mut cd = ConfusionMatrix::new(NUM_DEFECT_CLASSES);
    accumulate_confusion(&pe, gt_element, &mut ce)?;
    accumulate_confusion(&pd, gt_defect, &mut cd)?;
    Ok((ce, cd))
}

/// Corrosion share of one predicted element class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionEntry {
    pub class: usize,
    pub pixels: u64,
    pub corroded_pixels: u64,
    pub proportion: f64,
}

/// For every element class with at least one predicted pixel, the fraction
/// of its pixels predicted as corrosion. Ordered by class index.
pub fn condition_assessment(
    element_pred: &GrayImage,
    defect_pred: &GrayImage,
) -> Result<Vec<ConditionEntry>> {
    if element_pred.dimensions() != defect_pred.dimensions() {
        return Err(Error::Shape(format!(
            "element {:?} vs defect {:?}",
            element_pred.dimensions(),
            defect_pred.dimensions()
        )));
    }
    let mut pixels = [0u64; NUM_ELEMENT_CLASSES];
    let mut corroded = [0u64; NUM_ELEMENT_CLASSES];
    for (&e, &d) in element_pred.as_raw().iter().zip(defect_pred.as_raw()) {
        let e = e as usize;
        if e >= NUM_ELEMENT_CLASSES {
            return Err(Error::ClassOutOfRange {
                value: e,
                classes: NUM_ELEMENT_CLASSES,
            });
        }
        pixels[e] += 1;
        if d == CORROSION {
            corroded[e] += 1;
        }
    }
    Ok((0..NUM_ELEMENT_CLASSES)
        .filter(|&k| pixels[k] > 0)
        .map(|k| ConditionEntry {
            class: k,
            pixels: pixels[k],
            corroded_pixels: corroded[k],
            proportion: corroded[k] as f64 / pixels[k] as f64,
        })
        .collect())
}
