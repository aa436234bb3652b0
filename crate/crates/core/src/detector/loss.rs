//! Composite grid-detector loss.
//!
//! Per image, each ground truth is owned by the cell containing its center
//! (`floor(c·S)`, clamped to the last cell). If several ground truths land in
//! one cell the first in list order owns it and the rest are ignored. Within
//! the cell, the slot whose current decoded box overlaps the ground truth most
//! is responsible (lowest slot on ties).
//!
//! ```text
//! loss = (1/N) · [ λ_coord · Σ_resp Σ_{x,y,w,h} (σ(t) − target)²
//!                + Σ_resp BCE(t_o, 1) + λ_noobj · Σ_other BCE(t_o, 0)
//!                + Σ_resp cells Σ_k BCE(t_k, [k = class]) ]
//! ```
//!
//! BCE is evaluated on logits as `softplus(t) − y·t`, which stays finite at
//! saturated logits.

use serde::{Deserialize, Serialize};

use crate::autodiff::{GradTape, Var};
use crate::boxes::GroundTruth;
use crate::error::{Error, Result};
use crate::metrics::iou;
use crate::ops::softplus_scalar;
use crate::tensor::Tensor;

use super::decode::{decode_box, HeadLayout, TH, TO, TW, TX, TY};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub coord: f64,
    pub noobj: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            coord: 5.0,
            noobj: 0.5,
        }
    }
}

/// Dense per-element targets aligned with the `N×C×S×S` raw map.
#[derive(Clone, Debug, PartialEq)]
pub struct LossTargets {
    /// Coordinate targets in sigmoid space (zero where unused).
    pub coord_target: Tensor,
    /// 1 on responsible coordinate entries, 0 elsewhere.
    pub coord_mask: Tensor,
    /// BCE labels for objectness and class entries.
    pub label: Tensor,
    /// BCE weights: λ_noobj on unassigned objectness, 1 on responsible objectness and class entries.
    pub bce_weight: Tensor,
    pub batch: usize,
}

/// Cell index along one axis for a normalized center coordinate.
pub fn cell_of(center: f64, grid: usize) -> usize {
    ((center * grid as f64).floor() as usize).min(grid - 1)
}

pub fn validate_ground_truth(g: &GroundTruth, num_classes: usize) -> Result<()> {
    let b = &g.bbox;
    let fields = [("cx", b.cx), ("cy", b.cy), ("w", b.w), ("h", b.h)];
    for (name, v) in fields {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::InvalidArgument(format!(
                "ground truth {name}={v} outside [0,1]"
            )));
        }
    }
    if g.class_id >= num_classes {
        return Err(Error::InvalidArgument(format!(
            "ground truth class {} but the head has {num_classes} classes",
            g.class_id
        )));
    }
    Ok(())
}

pub fn build_targets(
    raw: &Tensor,
    targets: &[Vec<GroundTruth>],
    boxes_per_cell: usize,
    weights: LossWeights,
) -> Result<LossTargets> {
    let (n, c, s, s2) = raw.nchw()?;
    if targets.len() != n {
        return Err(Error::InvalidArgument(format!(
            "{} target lists for a batch of {n}",
            targets.len()
        )));
    }
    let image = raw.slice_outer(0);
    let l = HeadLayout::from_raw(&image, boxes_per_cell)?;
    debug_assert_eq!((l.channels(), l.grid), (c, s));
    debug_assert_eq!(s, s2);

    let per_image = c * s * s;
    let shape = raw.shape();
    let mut coord_target = Tensor::zeros(shape);
    let mut coord_mask = Tensor::zeros(shape);
    let mut label = Tensor::zeros(shape);
    let mut bce_weight = Tensor::zeros(shape);

    for (img, gts) in targets.iter().enumerate() {
        let base = img * per_image;
        let raw_img = &raw.data()[base..base + per_image];
        let wt = bce_weight.data_mut();
        for row in 0..s {
            for col in 0..s {
                for b in 0..l.boxes {
                    wt[base + l.index(l.box_channel(b, TO), row, col)] = weights.noobj;
                }
            }
        }
        let mut owned = vec![false; s * s];
        for g in gts {
            validate_ground_truth(g, l.classes)?;
            let (row, col) = (cell_of(g.bbox.cy, s), cell_of(g.bbox.cx, s));
            if std::mem::replace(&mut owned[row * s + col], true) {
                continue;
            }
            let slot = (0..l.boxes)
                .map(|b| (b, iou(&decode_box(raw_img, &l, row, col, b), &g.bbox)))
                .fold((0, f64::NEG_INFINITY), |best, c| if c.1 > best.1 { c } else { best })
                .0;
            let goals = [
                (TX, g.bbox.cx * s as f64 - col as f64),
                (TY, g.bbox.cy * s as f64 - row as f64),
                (TW, g.bbox.w),
                (TH, g.bbox.h),
            ];
            for (field, goal) in goals {
                let i = base + l.index(l.box_channel(slot, field), row, col);
                coord_target.data_mut()[i] = goal;
                coord_mask.data_mut()[i] = 1.0;
            }
            let o = base + l.index(l.box_channel(slot, TO), row, col);
            label.data_mut()[o] = 1.0;
            bce_weight.data_mut()[o] = 1.0;
            for k in 0..l.classes {
                let i = base + l.index(l.class_channel(k), row, col);
                label.data_mut()[i] = (k == g.class_id) as u8 as f64;
                bce_weight.data_mut()[i] = 1.0;
            }
        }
    }
    Ok(LossTargets {
        coord_target,
        coord_mask,
        label,
        bce_weight,
        batch: n,
    })
}

/// Records the loss on `tape` and returns the scalar node.
pub fn detection_loss_on_tape(
    tape: &mut GradTape,
    raw: Var,
    targets: &[Vec<GroundTruth>],
    boxes_per_cell: usize,
    weights: LossWeights,
) -> Result<Var> {
    let t = build_targets(tape.value(raw), targets, boxes_per_cell, weights)?;
    let neg_target = t.coord_target.map(|v| -v);

    let probs = tape.sigmoid(raw);
    let diff = tape.add_const(probs, &neg_target)?;
    let diff = tape.mul_const(diff, &t.coord_mask)?;
    let sq = tape.square(diff);
    let coord = tape.sum(sq);
    let coord = tape.scale(coord, weights.coord);

    let sp = tape.softplus(raw);
    let yt = tape.mul_const(raw, &t.label)?;
    let bce = tape.sub(sp, yt)?;
    let bce = tape.mul_const(bce, &t.bce_weight)?;
    let bce = tape.sum(bce);

    let total = tape.add(coord, bce)?;
    Ok(tape.scale(total, 1.0 / t.batch as f64))
}

/// Loss value without recording gradients.
pub fn detection_loss(
    raw: &Tensor,
    targets: &[Vec<GroundTruth>],
    boxes_per_cell: usize,
    weights: LossWeights,
) -> Result<f64> {
    let t = build_targets(raw, targets, boxes_per_cell, weights)?;
    let mut coord = 0.0;
    let mut bce = 0.0;
    for i in 0..raw.len() {
        let x = raw.data()[i];
        if t.coord_mask.data()[i] != 0.0 {
            coord += (crate::ops::sigmoid_scalar(x) - t.coord_target.data()[i]).powi(2);
        }
        let w = t.bce_weight.data()[i];
        if w != 0.0 {
            bce += w * (softplus_scalar(x) - t.label.data()[i] * x);
        }
    }
    Ok((weights.coord * coord + bce) / t.batch as f64)
}
