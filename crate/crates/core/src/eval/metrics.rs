//! Answer scoring and temporal grounding metrics.

use serde::{Deserialize, Serialize};

use crate::text::normalize;

pub fn score_mc(pred: usize, gt: usize) -> f64 {
    if pred == gt {
        1.0
    } else {
        0.0
    }
}

/// `min(m / 2, 1)` where `m` counts annotations equal to the prediction
/// after normalization.
pub fn score_open_ended(pred: &str, gt_answers: &[String]) -> f64 {
    let p = normalize(pred);
    let m = gt_answers.iter().filter(|a| normalize(a) == p).count();
    (m as f64 / 2.0).min(1.0)
}

fn len(a: (f64, f64)) -> f64 {
    (a.1 - a.0).max(0.0)
}

fn overlap(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.1.min(b.1) - a.0.max(b.0)).max(0.0)
}

/// Intersection over union of two intervals; 0 when the union is empty.
pub fn interval_iou(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = overlap(a, b);
    let union = len(a) + len(b) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Intersection over the predicted interval; 0 for an empty prediction.
pub fn interval_iop(pred: (f64, f64), gt: (f64, f64)) -> f64 {
    let p = len(pred);
    if p <= 0.0 {
        0.0
    } else {
        overlap(pred, gt) / p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundedMetrics {
    #[serde(rename = "mIoP")]
    pub miop: f64,
    #[serde(rename = "IoP_at_05")]
    pub iop_at_05: f64,
    #[serde(rename = "mIoU")]
    pub miou: f64,
    #[serde(rename = "IoU_at_05")]
    pub iou_at_05: f64,
    pub acc_at_gqa: f64,
}

/// One answered item with its predicted and true windows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundedSample {
    pub correct: bool,
    pub pred: (f64, f64),
    pub gt: (f64, f64),
}

/// Means and 0.5-threshold rates over the samples. `acc_at_gqa` counts
/// items that are correct and have IoP of at least 0.5.
pub fn grounded_metrics(samples: &[GroundedSample]) -> Option<GroundedMetrics> {
    if samples.is_empty() {
        return None;
    }
    let n = samples.len() as f64;
    let mut m = GroundedMetrics { miop: 0.0, iop_at_05: 0.0, miou: 0.0, iou_at_05: 0.0, acc_at_gqa: 0.0 };
    for s in samples {
        let iop = interval_iop(s.pred, s.gt);
        let iou = interval_iou(s.pred, s.gt);
        m.miop += iop;
        m.miou += iou;
        m.iop_at_05 += f64::from(iop >= 0.5);
        m.iou_at_05 += f64::from(iou >= 0.5);
        m.acc_at_gqa += f64::from(s.correct && iop >= 0.5);
    }
    m.miop /= n;
    m.miou /= n;
    m.iop_at_05 /= n;
    m.iou_at_05 /= n;
    m.acc_at_gqa /= n;
    Some(m)
}
