//! Region F1, boundary F1 and IOU.
//!
//! Foreground is the positive class. When neither mask has a positive pixel
//! the region scores are 1; when only one side is empty they are 0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::SegmentationMask;

pub const BOUNDARY_TOLERANCE: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

fn check_dims(pred: &SegmentationMask, gt: &SegmentationMask) -> Result<()> {
    if pred.width != gt.width || pred.height != gt.height {
        return Err(Error::DimensionMismatch(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.width, pred.height, gt.width, gt.height
        )));
    }
    Ok(())
}

pub fn confusion_counts(pred: &SegmentationMask, gt: &SegmentationMask) -> Result<ConfusionCounts> {
    check_dims(pred, gt)?;
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.labels.iter().zip(&gt.labels) {
        match (p, g) {
            (1, 1) => c.tp += 1,
            (1, _) => c.fp += 1,
            (_, 1) => c.fn_ += 1,
            _ => c.tn += 1,
        }
    }
    Ok(c)
}

/// `2TP / (2TP + FN + FP)`.
pub fn region_f1(c: &ConfusionCounts) -> f64 {
    let denom = 2 * c.tp + c.fn_ + c.fp;
    if denom == 0 {
        return 1.0;
    }
    (2 * c.tp) as f64 / denom as f64
}

/// `TP / (TP + FP + FN)`.
pub fn iou(c: &ConfusionCounts) -> f64 {
    let denom = c.tp + c.fp + c.fn_;
    if denom == 0 {
        return 1.0;
    }
    c.tp as f64 / denom as f64
}

/// Foreground pixels with a background 4-neighbour; pixels outside the frame
/// count as background.
pub fn boundary_pixels(mask: &SegmentationMask) -> Vec<bool> {
    let (w, h) = (mask.width, mask.height);
    let mut out = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            if mask.get(x, y) != 1 {
                continue;
            }
            let edge = x == 0 || y == 0 || x + 1 == w || y + 1 == h;
            out[y * w + x] = edge
                || mask.get(x - 1, y) == 0
                || mask.get(x + 1, y) == 0
                || mask.get(x, y - 1) == 0
                || mask.get(x, y + 1) == 0;
        }
    }
    out
}

/// Fraction of `from` boundary pixels within `tol` of some `to` boundary pixel.
fn matched_fraction(from: &[bool], to: &[bool], w: usize, h: usize, tol: f64) -> (usize, usize) {
    let r = tol.floor() as isize;
    let tol2 = tol * tol;
    let mut total = 0;
    let mut hit = 0;
    for y in 0..h as isize {
        for x in 0..w as isize {
            if !from[y as usize * w + x as usize] {
                continue;
            }
            total += 1;
            'search: for dy in -r..=r {
                for dx in -r..=r {
                    if ((dx * dx + dy * dy) as f64) > tol2 {
                        continue;
                    }
                    let (nx, ny) = (x + dx, y + dy);
                    if nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h && to[ny as usize * w + nx as usize]
                    {
                        hit += 1;
                        break 'search;
                    }
                }
            }
        }
    }
    (hit, total)
}

/// F1 of boundary precision and recall, a boundary pixel matching when the
/// other mask has a boundary pixel within Euclidean distance `tol`.
pub fn boundary_f1(pred: &SegmentationMask, gt: &SegmentationMask, tol: f64) -> Result<f64> {
    check_dims(pred, gt)?;
    if !(tol >= 0.0) {
        return Err(Error::Domain(format!("tolerance must be >= 0, got {tol}")));
    }
    let (w, h) = (pred.width, pred.height);
    let bp = boundary_pixels(pred);
    let bg = boundary_pixels(gt);
    let (p_hit, p_total) = matched_fraction(&bp, &bg, w, h, tol);
    let (g_hit, g_total) = matched_fraction(&bg, &bp, w, h, tol);
    match (p_total, g_total) {
        (0, 0) => return Ok(1.0),
        (0, _) | (_, 0) => return Ok(0.0),
        _ => {}
    }
    let precision = p_hit as f64 / p_total as f64;
    let recall = g_hit as f64 / g_total as f64;
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

/// One evaluated image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub name: String,
    pub region_f1: f64,
    pub boundary_f1: f64,
    pub iou: f64,
    pub runtime_ms: f64,
}

impl MetricRecord {
    pub fn evaluate(name: &str, pred: &SegmentationMask, gt: &SegmentationMask, runtime_ms: f64) -> Result<Self> {
        let c = confusion_counts(pred, gt)?;
        Ok(Self {
            name: name.to_string(),
            region_f1: region_f1(&c),
            boundary_f1: boundary_f1(pred, gt, BOUNDARY_TOLERANCE)?,
            iou: iou(&c),
            runtime_ms,
        })
    }

    /// `name: region_f1=.. boundary_f1=.. iou=.. runtime_ms=..`
    pub fn summary_line(&self) -> String {
        format!(
            "{}: region_f1={:.5} boundary_f1={:.5} iou={:.5} runtime_ms={:.1}",
            self.name, self.region_f1, self.boundary_f1, self.iou, self.runtime_ms
        )
    }
}

/// Mean of each metric across records, named `average`.
pub fn average(records: &[MetricRecord]) -> Option<MetricRecord> {
    if records.is_empty() {
        return None;
    }
    let k = records.len() as f64;
    let mean = |f: fn(&MetricRecord) -> f64| records.iter().map(f).sum::<f64>() / k;
    Some(MetricRecord {
        name: "average".into(),
        region_f1: mean(|r| r.region_f1),
        boundary_f1: mean(|r| r.boundary_f1),
        iou: mean(|r| r.iou),
        runtime_ms: mean(|r| r.runtime_ms),
    })
}
