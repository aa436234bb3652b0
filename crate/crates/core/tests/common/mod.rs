#![allow(dead_code)]

use hybdet::data::Rng;
use hybdet::{BBox, Detection, GroundTruth};

/// Overlap of two closed intervals.
fn overlap(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

pub fn oracle_iou(a: &BBox, b: &BBox) -> f64 {
    let (ax0, ax1) = (a.cx - a.w / 2.0, a.cx + a.w / 2.0);
    let (ay0, ay1) = (a.cy - a.h / 2.0, a.cy + a.h / 2.0);
    let (bx0, bx1) = (b.cx - b.w / 2.0, b.cx + b.w / 2.0);
    let (by0, by1) = (b.cy - b.h / 2.0, b.cy + b.h / 2.0);
    let inter = overlap(ax0, ax1, bx0, bx1) * overlap(ay0, ay1, by0, by1);
    let union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Per-image greedy matching, written as a selection loop: repeatedly take the
/// highest-confidence unvisited detection (earliest on ties).
fn oracle_match(dets: &[&Detection], gts: &[&GroundTruth], thr: f64) -> Vec<bool> {
    let mut visited = vec![false; dets.len()];
    let mut used = vec![false; gts.len()];
    let mut tp = vec![false; dets.len()];
    for _ in 0..dets.len() {
        let mut pick = usize::MAX;
        for i in 0..dets.len() {
            if !visited[i] && (pick == usize::MAX || dets[i].confidence > dets[pick].confidence) {
                pick = i;
            }
        }
        visited[pick] = true;
        let mut best = None;
        let mut best_iou = f64::NEG_INFINITY;
        for (g, gt) in gts.iter().enumerate() {
            let v = oracle_iou(&dets[pick].bbox, &gt.bbox);
            if !used[g] && v >= thr && v > best_iou {
                best = Some(g);
                best_iou = v;
            }
        }
        if let Some(g) = best {
            used[g] = true;
            tp[pick] = true;
        }
    }
    tp
}

/// AP as `(1/G) Σ_{TP ranks k} max_{j ≥ k} precision_j`.
fn oracle_ap(mut scored: Vec<(f64, usize, bool)>, num_gt: usize) -> f64 {
    // (confidence, pooled position, tp); stable descending by confidence
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let mut precision = Vec::new();
    let mut tps = 0;
    for (k, s) in scored.iter().enumerate() {
        tps += s.2 as usize;
        precision.push(tps as f64 / (k + 1) as f64);
    }
    let mut ap = 0.0;
    for k in 0..scored.len() {
        if scored[k].2 {
            let best = precision[k..].iter().cloned().fold(0.0, f64::max);
            ap += best / num_gt as f64;
        }
    }
    ap
}

/// Mean AP over classes with ground truth at IoU `thr`; `None` if no class has any.
pub fn oracle_map(dets: &[Vec<Detection>], gts: &[Vec<GroundTruth>], classes: usize, thr: f64) -> Option<f64> {
    let mut aps = Vec::new();
    for c in 0..classes {
        let mut scored = Vec::new();
        let mut num_gt = 0;
        let mut pos = 0;
        for (d, g) in dets.iter().zip(gts) {
            let cd: Vec<&Detection> = d.iter().filter(|x| x.class_id == c).collect();
            let cg: Vec<&GroundTruth> = g.iter().filter(|x| x.class_id == c).collect();
            num_gt += cg.len();
            for (det, tp) in cd.iter().zip(oracle_match(&cd, &cg, thr)) {
                scored.push((det.confidence, pos, tp));
                pos += 1;
            }
        }
        if num_gt > 0 {
            aps.push(oracle_ap(scored, num_gt));
        }
    }
    (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64)
}

pub fn random_box(rng: &mut Rng) -> BBox {
    BBox::new(
        rng.uniform(0.05, 0.95),
        rng.uniform(0.05, 0.95),
        rng.uniform(0.02, 0.5),
        rng.uniform(0.02, 0.5),
    )
}

/// A random scene set: ≤10 images, ≤5 boxes per image, ≤3 classes. Some
/// detections are jittered copies of ground truth so matches occur; some
/// confidences are quantized so ties occur.
pub fn random_scenes(rng: &mut Rng) -> (Vec<Vec<Detection>>, Vec<Vec<GroundTruth>>, usize) {
    let classes = rng.range_inclusive(1, 3);
    let images = rng.range_inclusive(1, 10);
    let quantize = rng.bernoulli(0.3);
    let mut dets = Vec::new();
    let mut gts = Vec::new();
    for _ in 0..images {
        let g: Vec<GroundTruth> = (0..rng.range_inclusive(0, 5))
            .map(|_| GroundTruth {
                class_id: rng.range_inclusive(0, classes - 1),
                bbox: random_box(rng),
            })
            .collect();
        let mut d = Vec::new();
        for _ in 0..rng.range_inclusive(0, 5) {
            let mut conf = rng.next_f64();
            if quantize {
                conf = (conf * 4.0).round() / 4.0;
            }
            let det = if !g.is_empty() && rng.bernoulli(0.6) {
                let src = g[rng.range_inclusive(0, g.len() - 1)];
                let b = src.bbox;
                let class_id = if rng.bernoulli(0.85) { src.class_id } else { rng.range_inclusive(0, classes - 1) };
                let (dx, dy) = (rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05));
                let (sw, sh) = (rng.uniform(0.7, 1.3), rng.uniform(0.7, 1.3));
                Detection {
                    class_id,
                    bbox: BBox::new(b.cx + dx, b.cy + dy, b.w * sw, b.h * sh),
                    confidence: conf,
                }
            } else {
                Detection {
                    class_id: rng.range_inclusive(0, classes - 1),
                    bbox: random_box(rng),
                    confidence: conf,
                }
            };
            d.push(det);
        }
        dets.push(d);
        gts.push(g);
    }
    (dets, gts, classes)
}

/// Hull of a rotated rectangle: the center rotates, the half-extents become
/// `|cos|·w/2 + |sin|·h/2` and `|sin|·w/2 + |cos|·h/2` in pixels.
pub fn oracle_hull(b: &BBox, deg: f64, width: f64, height: f64) -> [f64; 4] {
    let t = deg * std::f64::consts::PI / 180.0;
    let (c, s) = (t.cos(), t.sin());
    let (px, py) = (b.cx * width - width / 2.0, b.cy * height - height / 2.0);
    let (qx, qy) = (px * c - py * s + width / 2.0, px * s + py * c + height / 2.0);
    let (pw, ph) = (b.w * width, b.h * height);
    let hw = 0.5 * (c.abs() * pw + s.abs() * ph);
    let hh = 0.5 * (s.abs() * pw + c.abs() * ph);
    [(qx - hw) / width, (qy - hh) / height, (qx + hw) / width, (qy + hh) / height]
}
