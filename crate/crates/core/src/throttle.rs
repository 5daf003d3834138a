//! Confidence throttling: binarization and F1-optimal threshold search.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::labeling::{DeltaBitmap, DeltaSet};
use crate::model::Model;

/// Bit `i` is set iff `conf[i] >= threshold`. With `max_degree`, only the
/// highest-confidence bits survive (ties keep the lower index).
pub fn binarize(conf: &[f64], threshold: f64, max_degree: Option<usize>) -> DeltaBitmap {
    let mut bm = DeltaBitmap::new(conf.len());
    match max_degree {
        None => {
            for (i, &c) in conf.iter().enumerate() {
                if c >= threshold {
                    bm.set(i, true);
                }
            }
        }
        Some(k) => {
            let mut above: Vec<usize> = (0..conf.len()).filter(|&i| conf[i] >= threshold).collect();
            above.sort_by(|&a, &b| conf[b].total_cmp(&conf[a]).then(a.cmp(&b)));
            for &i in above.iter().take(k) {
                bm.set(i, true);
            }
        }
    }
    bm
}

/// The `k` highest confidences regardless of threshold.
pub fn top_k(conf: &[f64], k: usize) -> DeltaBitmap {
    binarize(conf, f64::NEG_INFINITY, Some(k))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Metrics {
    /// Empty prediction: precision 1 if nothing was expected, else 0.
    /// Empty label: recall 1. F1 is 0 when both are 0.
    pub fn from_counts(tp: u64, fp: u64, fn_: u64) -> Self {
        let predicted = tp + fp;
        let actual = tp + fn_;
        let precision = if predicted == 0 {
            if actual == 0 {
                1.0
            } else {
                0.0
            }
        } else {
            tp as f64 / predicted as f64
        };
        let recall = if actual == 0 {
            1.0
        } else {
            tp as f64 / actual as f64
        };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            precision,
            recall,
            f1,
        }
    }
}

pub fn set_metrics(pred: &DeltaSet, label: &DeltaSet) -> Metrics {
    let tp = pred.intersection(label).count() as u64;
    Metrics::from_counts(tp, pred.len() as u64 - tp, label.len() as u64 - tp)
}

/// Pooled true/false positive and false negative counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl Counts {
    pub fn add(&mut self, pred: &DeltaBitmap, label: &DeltaBitmap) {
        for i in 0..pred.len() {
            match (pred.get(i), label.get(i)) {
                (true, true) => self.tp += 1,
                (true, false) => self.fp += 1,
                (false, true) => self.fn_ += 1,
                _ => {}
            }
        }
    }

    pub fn metrics(&self) -> Metrics {
        Metrics::from_counts(self.tp, self.fp, self.fn_)
    }
}

/// Micro-averaged metrics and total predicted bits at one threshold.
pub fn micro_metrics(
    confs: &[Vec<f64>],
    labels: &[DeltaBitmap],
    threshold: f64,
    max_degree: Option<usize>,
) -> (Metrics, u64) {
    let mut counts = Counts::default();
    let mut predicted = 0u64;
    for (c, l) in confs.iter().zip(labels) {
        let bm = binarize(c, threshold, max_degree);
        predicted += bm.count_ones() as u64;
        counts.add(&bm, l);
    }
    (counts.metrics(), predicted)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub optimal_threshold: f64,
    pub optimal_f1: f64,
    pub grid: Vec<GridPoint>,
    /// Mean predicted bits per sample at the optimum.
    pub mean_degree: f64,
    /// Every validation label was empty; the threshold fell back to 0.5.
    pub degenerate: bool,
}

/// Threshold grid `{step, 2·step, …}` strictly inside `(0, 1)`, computed as
/// `k / steps` to avoid accumulated rounding.
pub fn threshold_grid(grid_step: f64) -> Result<Vec<f64>> {
    if !(grid_step > 0.0 && grid_step < 1.0) {
        return Err(Error::Config("grid step must lie in (0, 1)".into()));
    }
    let steps = libm::round(1.0 / grid_step) as usize;
    if steps < 2 {
        return Err(Error::Config("grid step leaves no interior thresholds".into()));
    }
    Ok((1..steps).map(|k| k as f64 / steps as f64).collect())
}

/// Grid search for the threshold with the highest micro-F1; ties go to
/// the larger threshold.
pub fn tune_threshold(
    confs: &[Vec<f64>],
    labels: &[DeltaBitmap],
    grid_step: f64,
    max_degree: Option<usize>,
) -> Result<ThresholdReport> {
    if confs.is_empty() || confs.len() != labels.len() {
        return Err(Error::Empty("validation confidences"));
    }
    let thresholds = threshold_grid(grid_step)?;
    let mut grid = Vec::with_capacity(thresholds.len());
    let mut best: Option<(f64, f64, u64)> = None;
    for &t in &thresholds {
        let (m, predicted) = micro_metrics(confs, labels, t, max_degree);
        grid.push(GridPoint {
            threshold: t,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
        });
        if best.is_none_or(|(_, f1, _)| m.f1 >= f1) {
            best = Some((t, m.f1, predicted));
        }
    }
    let degenerate = labels.iter().all(|l| l.count_ones() == 0);
    let (threshold, f1, predicted) = if degenerate {
        let (m, p) = micro_metrics(confs, labels, 0.5, max_degree);
        (0.5, m.f1, p)
    } else {
        best.expect("grid is non-empty")
    };
    Ok(ThresholdReport {
        optimal_threshold: threshold,
        optimal_f1: f1,
        grid,
        mean_degree: predicted as f64 / confs.len() as f64,
        degenerate,
    })
}

/// Model confidences for every sample.
pub fn confidences(model: &Model, samples: &[Sample]) -> Result<Vec<Vec<f64>>> {
    samples.iter().map(|s| model.forward(&s.input)).collect()
}

/// Labels of `samples`, in order.
pub fn labels_of(samples: &[Sample]) -> Vec<DeltaBitmap> {
    samples.iter().map(|s| s.label.clone()).collect()
}

/// Runs the model on validation samples and tunes its threshold.
pub fn tune_model_threshold(
    model: &Model,
    validation: &[Sample],
    grid_step: f64,
    max_degree: Option<usize>,
) -> Result<ThresholdReport> {
    let confs = confidences(model, validation)?;
    tune_threshold(&confs, &labels_of(validation), grid_step, max_degree)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn binarize_examples() {
        assert_eq!(binarize(&[0.0; 8], 0.01, None).count_ones(), 0);
        let bm = binarize(&[0.9, 0.6, 0.2, 0.1], 0.5, None);
        assert_eq!(bm.iter_ones().collect::<Vec<_>>(), vec![0, 1]);
        let capped = binarize(&[0.6, 0.9, 0.7, 0.1], 0.5, Some(2));
        assert_eq!(capped.iter_ones().collect::<Vec<_>>(), vec![1, 2]);
        let top = top_k(&[0.1, 0.3, 0.2, 0.05], 2);
        assert_eq!(top.iter_ones().collect::<Vec<_>>(), vec![1, 2]);
    }

    #[test]
    fn set_metric_examples() {
        let m = set_metrics(&DeltaSet::from([1, 5]), &DeltaSet::from([1, 2]));
        assert_eq!((m.precision, m.recall, m.f1), (0.5, 0.5, 0.5));
        let m = set_metrics(&DeltaSet::from([3, 4]), &DeltaSet::from([3, 4]));
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
        let m = set_metrics(&DeltaSet::new(), &DeltaSet::from([1]));
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
        let m = set_metrics(&DeltaSet::new(), &DeltaSet::new());
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
    }

    fn bitmap(len: usize, ones: &[usize]) -> DeltaBitmap {
        let mut b = DeltaBitmap::new(len);
        for &i in ones {
            b.set(i, true);
        }
        b
    }

    #[test]
    fn single_sample_tie_break() {
        let confs = vec![vec![0.9, 0.6, 0.2]];
        let labels = vec![bitmap(3, &[0, 1])];
        let r = tune_threshold(&confs, &labels, 0.01, None).unwrap();
        assert_eq!(r.grid.len(), 99);
        // brute force: F1 = 1 exactly for thresholds in (0.2, 0.6]
        for p in &r.grid {
            let expect = p.threshold > 0.2 && p.threshold <= 0.6;
            assert_eq!(p.f1 == 1.0, expect, "threshold {}", p.threshold);
        }
        assert_eq!(r.optimal_threshold, 0.6);
        assert_eq!(r.optimal_f1, 1.0);
        assert_eq!(r.mean_degree, 2.0);
        assert!(!r.degenerate);
    }

    #[test]
    fn empty_labels_are_degenerate() {
        let confs = vec![vec![0.9, 0.1]];
        let labels = vec![DeltaBitmap::new(2)];
        let r = tune_threshold(&confs, &labels, 0.01, None).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.optimal_threshold, 0.5);
    }

    #[test]
    fn grid_rejects_bad_step() {
        assert!(threshold_grid(0.0).is_err());
        assert!(threshold_grid(1.0).is_err());
        assert_eq!(threshold_grid(0.25).unwrap(), vec![0.25, 0.5, 0.75]);
    }
}
