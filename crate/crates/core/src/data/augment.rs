//! Photometric and geometric augmentation with matching box transforms.
//!
//! Geometry works in pixel space with the y axis pointing down; positive
//! rotation angles turn the image clockwise as displayed. Pixels outside the
//! source image sample as 0.

use serde::{Deserialize, Serialize};

use super::rng::Rng;
use super::Sample;
use crate::boxes::{BBox, GroundTruth};
use crate::tensor::Tensor;

/// Boxes keeping less than this fraction of their area after clipping are dropped.
pub const MIN_KEPT_AREA_FRACTION: f64 = 0.25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentPolicy {
    pub flip_p: f64,
    pub rotate_p: f64,
    pub zoom_p: f64,
    pub brightness_p: f64,
    pub contrast_p: f64,
    pub max_rotation_deg: f64,
    pub zoom_range: (f64, f64),
    /// Brightness offset drawn from `[-delta, +delta]`.
    pub brightness_delta: f64,
    pub contrast_range: (f64, f64),
    pub seed: u64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            flip_p: 0.5,
            rotate_p: 0.5,
            zoom_p: 0.5,
            brightness_p: 0.5,
            contrast_p: 0.5,
            max_rotation_deg: 15.0,
            zoom_range: (0.8, 1.2),
            brightness_delta: 0.2,
            contrast_range: (0.8, 1.2),
            seed: 0,
        }
    }
}

impl AugmentPolicy {
    /// Every transform disabled.
    pub fn none() -> Self {
        Self {
            flip_p: 0.0,
            rotate_p: 0.0,
            zoom_p: 0.0,
            brightness_p: 0.0,
            contrast_p: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> crate::error::Result<()> {
        let probs = [self.flip_p, self.rotate_p, self.zoom_p, self.brightness_p, self.contrast_p];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(crate::error::invalid("augment probabilities must lie in [0,1]"));
        }
        let (lo, hi) = self.zoom_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(crate::error::invalid("zoom range must satisfy 0 < lo <= hi"));
        }
        let (lo, hi) = self.contrast_range;
        if !(lo >= 0.0 && lo <= hi) {
            return Err(crate::error::invalid("contrast range must satisfy 0 <= lo <= hi"));
        }
        Ok(())
    }
}

/// Applies each enabled transform independently with its probability, in the
/// order flip, rotation, zoom, brightness, contrast.
pub fn augment(sample: &Sample, policy: &AugmentPolicy, rng: &mut Rng) -> Sample {
    let mut s = sample.clone();
    if rng.bernoulli(policy.flip_p) {
        s = hflip(&s);
    }
    if rng.bernoulli(policy.rotate_p) {
        let m = policy.max_rotation_deg;
        s = rotate(&s, rng.uniform(-m, m));
    }
    if rng.bernoulli(policy.zoom_p) {
        let (lo, hi) = policy.zoom_range;
        s = zoom(&s, rng.uniform(lo, hi));
    }
    if rng.bernoulli(policy.brightness_p) {
        let d = policy.brightness_delta;
        s = adjust_brightness(&s, rng.uniform(-d, d));
    }
    if rng.bernoulli(policy.contrast_p) {
        let (lo, hi) = policy.contrast_range;
        s = adjust_contrast(&s, rng.uniform(lo, hi));
    }
    s
}

fn dims(s: &Sample) -> (usize, usize, usize) {
    let sh = s.image.shape();
    (sh[0], sh[1], sh[2])
}

/// Mirror about the vertical center line.
pub fn hflip(sample: &Sample) -> Sample {
    let (c, h, w) = dims(sample);
    let src = sample.image.data();
    let mut out = vec![0.0; src.len()];
    for ch in 0..c {
        for i in 0..h {
            let row = (ch * h + i) * w;
            for j in 0..w {
                out[row + j] = src[row + w - 1 - j];
            }
        }
    }
    Sample {
        image: Tensor::new(sample.image.shape(), out).expect("same shape"),
        labels: sample
            .labels
            .iter()
            .map(|g| GroundTruth {
                class_id: g.class_id,
                bbox: BBox { cx: 1.0 - g.bbox.cx, ..g.bbox },
            })
            .collect(),
        source: sample.source.clone(),
    }
}

/// Bilinear sample at continuous pixel coordinates (pixel centers at +0.5),
/// zero outside the image.
fn sample_zero(plane: &[f64], h: usize, w: usize, x: f64, y: f64) -> f64 {
    let (fx, fy) = (x - 0.5, y - 0.5);
    let (x0, y0) = (fx.floor(), fy.floor());
    let (ax, ay) = (fx - x0, fy - y0);
    let at = |yy: f64, xx: f64| -> f64 {
        if yy < 0.0 || xx < 0.0 || yy >= h as f64 || xx >= w as f64 {
            0.0
        } else {
            plane[yy as usize * w + xx as usize]
        }
    };
    (1.0 - ay) * ((1.0 - ax) * at(y0, x0) + ax * at(y0, x0 + 1.0))
        + ay * ((1.0 - ax) * at(y0 + 1.0, x0) + ax * at(y0 + 1.0, x0 + 1.0))
}

/// Resamples every channel through an output→source coordinate map.
fn warp(image: &Tensor, map: impl Fn(f64, f64) -> (f64, f64)) -> Tensor {
    let sh = image.shape();
    let (c, h, w) = (sh[0], sh[1], sh[2]);
    let src = image.data();
    let mut out = vec![0.0; src.len()];
    for i in 0..h {
        for j in 0..w {
            let (sx, sy) = map(j as f64 + 0.5, i as f64 + 0.5);
            for ch in 0..c {
                out[(ch * h + i) * w + j] = sample_zero(&src[ch * h * w..(ch + 1) * h * w], h, w, sx, sy);
            }
        }
    }
    Tensor::new(sh, out).expect("same shape")
}

/// Clips transformed boxes and drops those that lose too much area.
fn keep_clipped(labels: impl Iterator<Item = GroundTruth>) -> Vec<GroundTruth> {
    labels
        .filter_map(|g| {
            let clipped = g.bbox.clipped();
            let full = g.bbox.area();
            (full > 0.0 && clipped.area() >= MIN_KEPT_AREA_FRACTION * full && clipped.w > 0.0 && clipped.h > 0.0)
                .then_some(GroundTruth { class_id: g.class_id, bbox: clipped })
        })
        .collect()
}

/// Axis-aligned hull of a normalized box rotated about the image center,
/// before clipping.
pub fn rotated_hull(b: &BBox, degrees: f64, width: usize, height: usize) -> BBox {
    let (w, h) = (width as f64, height as f64);
    let (sin, cos) = degrees.to_radians().sin_cos();
    let (ccx, ccy) = (0.5 * w, 0.5 * h);
    let [x1, y1, x2, y2] = b.corners();
    let mut lo = (f64::INFINITY, f64::INFINITY);
    let mut hi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (x, y) in [(x1, y1), (x2, y1), (x2, y2), (x1, y2)] {
        let (dx, dy) = (x * w - ccx, y * h - ccy);
        let rx = ccx + cos * dx - sin * dy;
        let ry = ccy + sin * dx + cos * dy;
        lo = (lo.0.min(rx), lo.1.min(ry));
        hi = (hi.0.max(rx), hi.1.max(ry));
    }
    BBox::from_corners(lo.0 / w, lo.1 / h, hi.0 / w, hi.1 / h)
}

pub fn rotate(sample: &Sample, degrees: f64) -> Sample {
    let (_, h, w) = dims(sample);
    let (sin, cos) = degrees.to_radians().sin_cos();
    let (ccx, ccy) = (0.5 * w as f64, 0.5 * h as f64);
    // inverse rotation maps output pixels back into the source
    let image = warp(&sample.image, |x, y| {
        let (dx, dy) = (x - ccx, y - ccy);
        (ccx + cos * dx + sin * dy, ccy - sin * dx + cos * dy)
    });
    let labels = keep_clipped(sample.labels.iter().map(|g| GroundTruth {
        class_id: g.class_id,
        bbox: rotated_hull(&g.bbox, degrees, w, h),
    }));
    Sample {
        image,
        labels,
        source: sample.source.clone(),
    }
}

/// Scale by `factor` about the center: crops when > 1, zero-pads when < 1.
pub fn zoom(sample: &Sample, factor: f64) -> Sample {
    let (_, h, w) = dims(sample);
    let (ccx, ccy) = (0.5 * w as f64, 0.5 * h as f64);
    let image = warp(&sample.image, |x, y| {
        (ccx + (x - ccx) / factor, ccy + (y - ccy) / factor)
    });
    let labels = keep_clipped(sample.labels.iter().map(|g| GroundTruth {
        class_id: g.class_id,
        bbox: BBox::new(
            0.5 + (g.bbox.cx - 0.5) * factor,
            0.5 + (g.bbox.cy - 0.5) * factor,
            g.bbox.w * factor,
            g.bbox.h * factor,
        ),
    }));
    Sample {
        image,
        labels,
        source: sample.source.clone(),
    }
}

fn map_pixels(sample: &Sample, f: impl Fn(f64) -> f64) -> Sample {
    Sample {
        image: sample.image.map(|v| f(v).clamp(0.0, 1.0)),
        labels: sample.labels.clone(),
        source: sample.source.clone(),
    }
}

pub fn adjust_brightness(sample: &Sample, delta: f64) -> Sample {
    map_pixels(sample, |v| v + delta)
}

/// Contrast scaling about mid-gray (0.5).
pub fn adjust_contrast(sample: &Sample, factor: f64) -> Sample {
    map_pixels(sample, |v| (v - 0.5) * factor + 0.5)
}
