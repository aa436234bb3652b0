//! Detection scoring: IoU, greedy matching, precision/recall/F1 and
//! all-point interpolated average precision.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use crate::boxes::BBox;
use crate::boxes::{Detection, GroundTruth};
use crate::error::{Error, Result};

pub const MAP_IOU_THRESHOLD: f64 = 0.5;
pub const DEFAULT_OPERATING_THRESHOLD: f64 = 0.25;

/// Intersection over union; 0 when the union is empty.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let [ax1, ay1, ax2, ay2] = a.corners();
    let [bx1, by1, bx2, by2] = b.corners();
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    let inter = iw * ih;
    let area = |x1: f64, y1: f64, x2: f64, y2: f64| (x2 - x1).max(0.0) * (y2 - y1).max(0.0);
    let union = area(ax1, ay1, ax2, ay2) + area(bx1, by1, bx2, by2) - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl MatchCounts {
    pub fn new(tp: usize, fp: usize, fn_: usize) -> Self {
        Self { tp, fp, fn_ }
    }
}

impl std::ops::AddAssign for MatchCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchResult {
    /// TP flag per detection, in input order.
    pub is_tp: Vec<bool>,
    pub counts: MatchCounts,
}

/// Indices of `dets` by descending confidence; ties keep input order.
fn by_confidence<T>(items: &[T], conf: impl Fn(&T) -> f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| conf(&items[b]).total_cmp(&conf(&items[a])));
    order
}

/// Greedy matching of single-class detections against ground truth.
///
/// Detections are visited by descending confidence. Each takes the unmatched
/// ground truth with the highest IoU (lowest index on ties) if that IoU
/// reaches `iou_threshold`; otherwise it is a false positive.
pub fn match_detections(dets: &[Detection], gts: &[BBox], iou_threshold: f64) -> MatchResult {
    let mut matched = vec![false; gts.len()];
    let mut is_tp = vec![false; dets.len()];
    for i in by_confidence(dets, |d| d.confidence) {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if matched[g] {
                continue;
            }
            let v = iou(&dets[i].bbox, gt);
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        if let Some((g, v)) = best {
            if v >= iou_threshold {
                matched[g] = true;
                is_tp[i] = true;
            }
        }
    }
    let tp = is_tp.iter().filter(|&&t| t).count();
    MatchResult {
        counts: MatchCounts::new(tp, dets.len() - tp, gts.len() - tp),
        is_tp,
    }
}

/// `(precision, recall)`; `None` marks a zero denominator.
pub fn precision_recall(c: MatchCounts) -> (Option<f64>, Option<f64>) {
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    (ratio(c.tp, c.tp + c.fp), ratio(c.tp, c.tp + c.fn_))
}

pub fn f1(precision: Option<f64>, recall: Option<f64>) -> Option<f64> {
    let (p, r) = (precision?, recall?);
    if p + r == 0.0 {
        return Some(0.0);
    }
    Some(2.0 * p * r / (p + r))
}

/// A detection reduced to what AP needs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoredFlag {
    pub confidence: f64,
    pub is_tp: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrCurve {
    /// `(recall, precision)` after each detection in the descending sweep.
    pub points: Vec<(f64, f64)>,
    pub num_gt: usize,
    /// Cumulative true positives after each detection.
    hits: Vec<usize>,
}

/// Exact sum of fractions; `None` once a term would overflow.
#[derive(Clone, Copy)]
struct Fraction {
    num: u128,
    den: u128,
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl Fraction {
    fn add(self, num: u128, den: u128) -> Option<Self> {
        let g = gcd(self.den, den);
        let lcm = (self.den / g).checked_mul(den)?;
        let a = self.num.checked_mul(lcm / self.den)?;
        let b = num.checked_mul(lcm / den)?;
        let sum = a.checked_add(b)?;
        let r = gcd(sum, lcm).max(1);
        Some(Self {
            num: sum / r,
            den: lcm / r,
        })
    }
}

impl PrCurve {
    pub fn from_flags(flags: &[ScoredFlag], num_gt: usize) -> Result<Self> {
        if num_gt == 0 {
            return Err(Error::UndefinedClass);
        }
        let mut tp = 0usize;
        let hits: Vec<usize> = by_confidence(flags, |f| f.confidence)
            .into_iter()
            .map(|i| {
                tp += flags[i].is_tp as usize;
                tp
            })
            .collect();
        let points = hits
            .iter()
            .enumerate()
            .map(|(rank, &t)| (t as f64 / num_gt as f64, t as f64 / (rank + 1) as f64))
            .collect();
        Ok(Self {
            points,
            num_gt,
            hits,
        })
    }

    /// Precision replaced by the maximum precision at equal-or-higher recall.
    pub fn envelope(&self) -> Vec<(f64, f64)> {
        let mut out = self.points.clone();
        for i in (0..out.len().saturating_sub(1)).rev() {
            out[i].1 = out[i].1.max(out[i + 1].1);
        }
        out
    }

    /// Area under the envelope step function, summed as exact fractions.
    pub fn area(&self) -> f64 {
        // envelope precision at each rank as the fraction hits/rank
        let mut env = vec![(0u128, 1u128); self.hits.len()];
        let mut best = (0u128, 1u128);
        for k in (0..self.hits.len()).rev() {
            let cand = (self.hits[k] as u128, k as u128 + 1);
            if cand.0 * best.1 > best.0 * cand.1 {
                best = cand;
            }
            env[k] = best;
        }
        let mut exact = Some(Fraction { num: 0, den: 1 });
        let mut approx = 0.0;
        let mut prev = 0;
        for (k, &t) in self.hits.iter().enumerate() {
            if t > prev {
                let (n, d) = env[k];
                exact = exact.and_then(|f| f.add(n, d));
                approx += n as f64 / d as f64;
            }
            prev = t;
        }
        let ap = match exact.and_then(|f| f.den.checked_mul(self.num_gt as u128).map(|d| (f.num, d))) {
            Some((n, d)) => n as f64 / d as f64,
            None => approx / self.num_gt as f64,
        };
        ap.clamp(0.0, 1.0)
    }
}

/// All-point interpolated AP for one class over pooled, pre-matched detections.
pub fn average_precision(flags: &[ScoredFlag], num_gt: usize) -> Result<f64> {
    if num_gt == 0 {
        return Err(Error::UndefinedClass);
    }
    Ok(PrCurve::from_flags(flags, num_gt)?.area())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// AP per class that has at least one ground truth.
    pub per_class_ap: BTreeMap<usize, f64>,
    pub map50: f64,
    pub operating_threshold: f64,
    pub counts: MatchCounts,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

fn class_boxes(gts: &[GroundTruth], class: usize) -> Vec<BBox> {
    gts.iter()
        .filter(|g| g.class_id == class)
        .map(|g| g.bbox)
        .collect()
}

fn class_dets(dets: &[Detection], class: usize, min_conf: Option<f64>) -> Vec<Detection> {
    dets.iter()
        .filter(|d| d.class_id == class && min_conf.is_none_or(|t| d.confidence >= t))
        .copied()
        .collect()
}

/// Full evaluation over a dataset at an arbitrary IoU threshold.
///
/// AP uses every detection (confidence sweep); precision/recall/F1 use only
/// detections with confidence ≥ `operating_threshold`.
pub fn evaluate_detections(
    per_image_dets: &[Vec<Detection>],
    per_image_gts: &[Vec<GroundTruth>],
    classes: &[usize],
    iou_threshold: f64,
    operating_threshold: f64,
) -> Result<MetricsReport> {
    if per_image_dets.len() != per_image_gts.len() {
        return Err(Error::InvalidArgument(format!(
            "{} detection lists for {} images",
            per_image_dets.len(),
            per_image_gts.len()
        )));
    }
    let mut per_class_ap = BTreeMap::new();
    let mut counts = MatchCounts::default();
    for &class in classes {
        let mut flags = Vec::new();
        let mut num_gt = 0;
        for (dets, gts) in per_image_dets.iter().zip(per_image_gts) {
            let gt_boxes = class_boxes(gts, class);
            num_gt += gt_boxes.len();
            let cd = class_dets(dets, class, None);
            let m = match_detections(&cd, &gt_boxes, iou_threshold);
            flags.extend(cd.iter().zip(&m.is_tp).map(|(d, &is_tp)| ScoredFlag {
                confidence: d.confidence,
                is_tp,
            }));
            let op = class_dets(dets, class, Some(operating_threshold));
            counts += match_detections(&op, &gt_boxes, iou_threshold).counts;
        }
        if num_gt > 0 {
            per_class_ap.insert(class, average_precision(&flags, num_gt)?);
        }
    }
    if per_class_ap.is_empty() {
        return Err(Error::InvalidArgument(
            "no class has any ground truth".into(),
        ));
    }
    let map50 = per_class_ap.values().sum::<f64>() / per_class_ap.len() as f64;
    let (precision, recall) = precision_recall(counts);
    Ok(MetricsReport {
        per_class_ap,
        map50,
        operating_threshold,
        counts,
        precision,
        recall,
        f1: f1(precision, recall),
    })
}

/// mAP at IoU 0.5 plus operating-point precision/recall/F1.
pub fn map50(
    per_image_dets: &[Vec<Detection>],
    per_image_gts: &[Vec<GroundTruth>],
    classes: &[usize],
    operating_threshold: f64,
) -> Result<MetricsReport> {
    evaluate_detections(
        per_image_dets,
        per_image_gts,
        classes,
        MAP_IOU_THRESHOLD,
        operating_threshold,
    )
}
