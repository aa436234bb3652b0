use crate::boxes::{BBox, Detection};
use crate::error::{Error, Result};
use crate::metrics::iou;
use crate::ops::sigmoid_scalar;
use crate::tensor::Tensor;

/// Smallest decoded width/height; keeps boxes non-degenerate when a size
/// logit saturates to 0.
const MIN_EXTENT: f64 = 1e-12;

/// Layout of the raw prediction map for one image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HeadLayout {
    pub grid: usize,
    pub boxes: usize,
    pub classes: usize,
}

impl HeadLayout {
    pub fn channels(&self) -> usize {
        self.boxes * 5 + self.classes
    }

    pub fn box_channel(&self, b: usize, field: usize) -> usize {
        b * 5 + field
    }

    pub fn class_channel(&self, k: usize) -> usize {
        self.boxes * 5 + k
    }

    /// Flat index into a `C×S×S` map.
    pub fn index(&self, channel: usize, row: usize, col: usize) -> usize {
        (channel * self.grid + row) * self.grid + col
    }

    pub fn from_raw(raw: &Tensor, boxes: usize) -> Result<Self> {
        let shape = raw.shape();
        let [c, s, s2] = shape else {
            return Err(Error::Shape {
                what: "raw prediction map must be C×S×S",
                left: shape.to_vec(),
                right: vec![],
            });
        };
        if s != s2 || *c < boxes * 5 + 1 {
            return Err(Error::Shape {
                what: "raw prediction map must be (B·5+K)×S×S",
                left: shape.to_vec(),
                right: vec![boxes * 5 + 1, *s, *s],
            });
        }
        Ok(Self {
            grid: *s,
            boxes,
            classes: c - boxes * 5,
        })
    }
}

pub const TX: usize = 0;
pub const TY: usize = 1;
pub const TW: usize = 2;
pub const TH: usize = 3;
pub const TO: usize = 4;

/// Decoded box for cell `(row, col)` and slot `b`, before thresholding.
pub(crate) fn decode_box(raw: &[f64], l: &HeadLayout, row: usize, col: usize, b: usize) -> BBox {
    let at = |f: usize| raw[l.index(l.box_channel(b, f), row, col)];
    let s = l.grid as f64;
    BBox::new(
        (col as f64 + sigmoid_scalar(at(TX))) / s,
        (row as f64 + sigmoid_scalar(at(TY))) / s,
        sigmoid_scalar(at(TW)).max(MIN_EXTENT),
        sigmoid_scalar(at(TH)).max(MIN_EXTENT),
    )
    .clipped()
}

/// Grid decode of one image's `(B·5+K)×S×S` map.
pub fn decode_predictions(raw: &Tensor, boxes_per_cell: usize, conf_threshold: f64) -> Result<Vec<Detection>> {
    let l = HeadLayout::from_raw(raw, boxes_per_cell)?;
    let data = raw.data();
    let mut out = Vec::new();
    for row in 0..l.grid {
        for col in 0..l.grid {
            let (class_id, class_prob) = (0..l.classes)
                .map(|k| (k, sigmoid_scalar(data[l.index(l.class_channel(k), row, col)])))
                .fold((0, f64::NEG_INFINITY), |best, c| if c.1 > best.1 { c } else { best });
            for b in 0..l.boxes {
                let objectness = sigmoid_scalar(data[l.index(l.box_channel(b, TO), row, col)]);
                let confidence = objectness * class_prob;
                if confidence >= conf_threshold {
                    out.push(Detection {
                        class_id,
                        bbox: decode_box(data, &l, row, col, b),
                        confidence,
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Greedy per-class non-maximum suppression; optional, off by default.
pub fn non_max_suppression(mut dets: Vec<Detection>, iou_threshold: f64) -> Vec<Detection> {
    dets.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    let mut kept: Vec<Detection> = Vec::with_capacity(dets.len());
    for d in dets {
        if kept
            .iter()
            .all(|k| k.class_id != d.class_id || iou(&k.bbox, &d.bbox) < iou_threshold)
        {
            kept.push(d);
        }
    }
    kept
}
