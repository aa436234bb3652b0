//! Deterministic synthetic scenes: filled circles (class 0) and filled
//! upright triangles (class 1) on a noisy background.

use serde::{Deserialize, Serialize};

use super::rng::Rng;
use super::Sample;
use crate::boxes::{BBox, GroundTruth};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Circle,
    Triangle,
}

impl ShapeKind {
    pub fn class_id(self) -> usize {
        match self {
            ShapeKind::Circle => 0,
            ShapeKind::Triangle => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    /// Square canvas side in pixels.
    pub canvas: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Circumradius range in pixels.
    pub radius_range: (f64, f64),
    /// Background pixels are uniform in `[0, noise]`.
    pub noise: f64,
    /// Probability that an object is a triangle rather than a circle.
    pub triangle_fraction: f64,
    /// Minimum pixel gap between object bounding boxes.
    pub min_gap: usize,
    /// When set, no two objects share a cell of this `g×g` grid.
    pub distinct_cells: Option<usize>,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            canvas: 64,
            min_objects: 1,
            max_objects: 2,
            radius_range: (7.0, 12.0),
            noise: 0.15,
            triangle_fraction: 0.5,
            min_gap: 2,
            distinct_cells: Some(4),
        }
    }
}

impl SceneSpec {
    pub fn num_classes(&self) -> usize {
        if self.triangle_fraction > 0.0 {
            2
        } else {
            1
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedObject {
    pub kind: ShapeKind,
    pub center: (f64, f64),
    pub radius: f64,
    /// Row-major `canvas × canvas` coverage mask.
    pub mask: Vec<bool>,
    pub label: GroundTruth,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedScene {
    pub sample: Sample,
    pub objects: Vec<RenderedObject>,
}

fn inside(kind: ShapeKind, center: (f64, f64), r: f64, x: f64, y: f64) -> bool {
    let (dx, dy) = (x - center.0, y - center.1);
    match kind {
        ShapeKind::Circle => dx * dx + dy * dy <= r * r,
        ShapeKind::Triangle => {
            // apex up; vertices at 90°, 210°, 330° on the circumcircle (y down)
            let s3 = 3f64.sqrt();
            let v = [
                (0.0, -r),
                (-0.5 * s3 * r, 0.5 * r),
                (0.5 * s3 * r, 0.5 * r),
            ];
            let edge = |a: (f64, f64), b: (f64, f64)| (b.0 - a.0) * (dy - a.1) - (b.1 - a.1) * (dx - a.0);
            let (e0, e1, e2) = (edge(v[0], v[1]), edge(v[1], v[2]), edge(v[2], v[0]));
            (e0 >= 0.0 && e1 >= 0.0 && e2 >= 0.0) || (e0 <= 0.0 && e1 <= 0.0 && e2 <= 0.0)
        }
    }
}

fn rasterize(kind: ShapeKind, center: (f64, f64), r: f64, n: usize) -> Vec<bool> {
    let mut mask = vec![false; n * n];
    for i in 0..n {
        for j in 0..n {
            mask[i * n + j] = inside(kind, center, r, j as f64 + 0.5, i as f64 + 0.5);
        }
    }
    mask
}

/// Tight pixel extent `(x0, y0, x1, y1)` (exclusive upper bounds) of a mask.
fn extent(mask: &[bool], n: usize) -> Option<(usize, usize, usize, usize)> {
    let mut e: Option<(usize, usize, usize, usize)> = None;
    for (k, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        let (i, j) = (k / n, k % n);
        e = Some(match e {
            None => (j, i, j + 1, i + 1),
            Some((x0, y0, x1, y1)) => (x0.min(j), y0.min(i), x1.max(j + 1), y1.max(i + 1)),
        });
    }
    e
}

/// Renders one scene and returns it with per-object masks.
pub fn render_scene(spec: &SceneSpec, rng: &mut Rng, source: String) -> RenderedScene {
    let n = spec.canvas;
    let nf = n as f64;
    let mut pixels: Vec<f64> = (0..3 * n * n).map(|_| spec.noise * rng.next_f64()).collect();
    let count = rng.range_inclusive(spec.min_objects, spec.max_objects.max(spec.min_objects));
    let mut objects: Vec<RenderedObject> = Vec::new();
    let mut extents: Vec<(usize, usize, usize, usize)> = Vec::new();
    for _ in 0..count {
        for _attempt in 0..100 {
            let kind = if rng.bernoulli(spec.triangle_fraction) {
                ShapeKind::Triangle
            } else {
                ShapeKind::Circle
            };
            let r = rng.uniform(spec.radius_range.0, spec.radius_range.1);
            let margin = r + 1.0;
            if 2.0 * margin >= nf {
                continue;
            }
            let center = (rng.uniform(margin, nf - margin), rng.uniform(margin, nf - margin));
            let mask = rasterize(kind, center, r, n);
            let Some(ext) = extent(&mask, n) else { continue };
            let gap = spec.min_gap;
            let overlaps = extents.iter().any(|o| {
                ext.0 < o.2 + gap && o.0 < ext.2 + gap && ext.1 < o.3 + gap && o.1 < ext.3 + gap
            });
            if overlaps {
                continue;
            }
            let bbox = BBox::from_corners(
                ext.0 as f64 / nf,
                ext.1 as f64 / nf,
                ext.2 as f64 / nf,
                ext.3 as f64 / nf,
            );
            if let Some(g) = spec.distinct_cells {
                let cell = |b: &BBox| {
                    let c = |v: f64| ((v * g as f64).floor() as usize).min(g - 1);
                    (c(b.cx), c(b.cy))
                };
                if objects.iter().any(|o| cell(&o.label.bbox) == cell(&bbox)) {
                    continue;
                }
            }
            let color = [rng.uniform(0.55, 1.0), rng.uniform(0.55, 1.0), rng.uniform(0.55, 1.0)];
            for (k, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
                for (ch, &v) in color.iter().enumerate() {
                    pixels[ch * n * n + k] = v;
                }
            }
            extents.push(ext);
            objects.push(RenderedObject {
                kind,
                center,
                radius: r,
                mask,
                label: GroundTruth {
                    class_id: kind.class_id(),
                    bbox,
                },
            });
            break;
        }
    }
    RenderedScene {
        sample: Sample {
            image: Tensor::new(&[3, n, n], pixels).expect("canvas shape"),
            labels: objects.iter().map(|o| o.label).collect(),
            source,
        },
        objects,
    }
}

/// `n` scenes; scene `i` draws from the stream derived from `(seed, i)`.
pub fn generate_synthetic(seed: u64, n: usize, spec: &SceneSpec) -> Vec<Sample> {
    (0..n)
        .map(|i| {
            let mut rng = Rng::derive(seed, i as u64);
            render_scene(spec, &mut rng, format!("synth-{seed}-{i:05}")).sample
        })
        .collect()
}
