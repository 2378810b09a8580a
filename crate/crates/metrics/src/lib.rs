//! Segmentation metrics over label maps.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("prediction has {pred} pixels but the ground truth has {truth}")]
    Extent { pred: usize, truth: usize },
    #[error("label {label} at pixel {pixel} outside 0..{classes}")]
    Label { label: usize, pixel: usize, classes: usize },
    #[error("accumulators with {0} and {1} classes cannot be merged")]
    Classes(usize, usize),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

pub const THRESHOLDS: [f64; 5] = [0.5, 0.6, 0.7, 0.8, 0.9];

fn ratio(i: u64, u: u64) -> f64 {
    if u == 0 {
        1.0
    } else {
        i as f64 / u as f64
    }
}

/// `|pred = c ∧ true = c| / |pred = c ∨ true = c|`, 1 when the union is empty.
pub fn class_iou(pred: &[usize], truth: &[usize], class: usize) -> f64 {
    let (mut i, mut u) = (0u64, 0u64);
    for (&p, &t) in pred.iter().zip(truth) {
        let (a, b) = (p == class, t == class);
        i += u64::from(a && b);
        u += u64::from(a || b);
    }
    ratio(i, u)
}

/// Fraction of IoUs strictly above `threshold`.
pub fn precision_at(ious: &[f64], threshold: f64) -> f64 {
    if ious.is_empty() {
        return 0.0;
    }
    ious.iter().filter(|&&v| v > threshold).count() as f64 / ious.len() as f64
}

/// Per-class intersection and union counts pooled over images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfusionAccumulator {
    pub num_classes: usize,
    pub intersection: Vec<u64>,
    pub union: Vec<u64>,
    /// Mean class IoU of each image, in insertion order.
    pub image_ious: Vec<f64>,
}

impl ConfusionAccumulator {
    pub fn new(num_classes: usize) -> Self {
        ConfusionAccumulator {
            num_classes,
            intersection: vec![0; num_classes],
            union: vec![0; num_classes],
            image_ious: Vec::new(),
        }
    }

    pub fn images(&self) -> usize {
        self.image_ious.len()
    }

    pub fn add(&mut self, pred: &[usize], truth: &[usize]) -> Result<()> {
        if pred.len() != truth.len() {
            return Err(MetricsError::Extent {
                pred: pred.len(),
                truth: truth.len(),
            });
        }
        let c = self.num_classes;
        for (pixel, &label) in pred.iter().chain(truth).enumerate() {
            if label >= c {
                return Err(MetricsError::Label {
                    label,
                    pixel: pixel % pred.len(),
                    classes: c,
                });
            }
        }
        let mut inter = vec![0u64; c];
        let mut uni = vec![0u64; c];
        for (&p, &t) in pred.iter().zip(truth) {
            if p == t {
                inter[p] += 1;
                uni[p] += 1;
            } else {
                uni[p] += 1;
                uni[t] += 1;
            }
        }
        let image = (0..c).map(|k| ratio(inter[k], uni[k])).sum::<f64>() / c as f64;
        for k in 0..c {
            self.intersection[k] += inter[k];
            self.union[k] += uni[k];
        }
        self.image_ious.push(image);
        Ok(())
    }

    /// Sums counts; `other`'s image IoUs are appended after this one's.
    pub fn merge(&mut self, other: &ConfusionAccumulator) -> Result<()> {
        if other.num_classes != self.num_classes {
            return Err(MetricsError::Classes(self.num_classes, other.num_classes));
        }
        for k in 0..self.num_classes {
            self.intersection[k] += other.intersection[k];
            self.union[k] += other.union[k];
        }
        self.image_ious.extend_from_slice(&other.image_ious);
        Ok(())
    }

    /// Dataset-level IoU per class from the pooled counts.
    pub fn class_ious(&self) -> Vec<f64> {
        (0..self.num_classes).map(|k| ratio(self.intersection[k], self.union[k])).collect()
    }

    /// Unweighted mean of the pooled per-class IoUs.
    pub fn average_iou(&self) -> f64 {
        let v = self.class_ious();
        v.iter().sum::<f64>() / v.len() as f64
    }

    /// Pooled foreground IoU: all classes except background 0 summed together.
    pub fn overall_iou(&self) -> f64 {
        let i = self.intersection.iter().skip(1).sum();
        let u = self.union.iter().skip(1).sum();
        ratio(i, u)
    }

    pub fn report(&self) -> MetricReport {
        MetricReport {
            images: self.images(),
            per_class_iou: self.class_ious(),
            average_iou: self.average_iou(),
            overall_iou: self.overall_iou(),
            precision: THRESHOLDS
                .iter()
                .map(|&t| (format!("{t:.1}"), precision_at(&self.image_ious, t)))
                .collect(),
        }
    }
}

/// Dataset-level average of [`class_iou`]-style pooled scores.
pub fn cosal_average_iou(predictions: &[(Vec<usize>, Vec<usize>)], num_classes: usize) -> Result<f64> {
    let mut acc = ConfusionAccumulator::new(num_classes);
    for (p, t) in predictions {
        acc.add(p, t)?;
    }
    Ok(acc.average_iou())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub images: usize,
    pub per_class_iou: Vec<f64>,
    pub average_iou: f64,
    pub overall_iou: f64,
    /// Keys are thresholds formatted with one decimal.
    pub precision: BTreeMap<String, f64>,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
