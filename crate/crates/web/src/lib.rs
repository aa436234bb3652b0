//! Browser bindings: a synthetic-scene and augmentation viewer, and an
//! IoU / precision-recall / AP explorer.

use hybdet::boxes::BBox;
use hybdet::data::{
    adjust_brightness, adjust_contrast, hflip, render_scene, rotate, zoom, Rng, Sample, SceneSpec,
};
use hybdet::metrics::{average_precision, iou, match_detections, PrCurve, ScoredFlag};
use hybdet::Detection;
use wasm_bindgen::prelude::*;

/// An RGBA raster plus its labels as flat `[class, cx, cy, w, h]` records.
#[wasm_bindgen]
pub struct SceneView {
    size: usize,
    rgba: Vec<u8>,
    boxes: Vec<f64>,
}

#[wasm_bindgen]
impl SceneView {
    #[wasm_bindgen(getter)]
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }

    pub fn boxes(&self) -> Vec<f64> {
        self.boxes.clone()
    }
}

fn to_view(sample: &Sample) -> SceneView {
    let (h, w) = (sample.height(), sample.width());
    let n = h * w;
    let d = sample.image.data();
    let mut rgba = Vec::with_capacity(4 * n);
    for i in 0..n {
        for c in 0..3 {
            rgba.push((d[c * n + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
        rgba.push(255);
    }
    let boxes = sample
        .labels
        .iter()
        .flat_map(|g| [g.class_id as f64, g.bbox.cx, g.bbox.cy, g.bbox.w, g.bbox.h])
        .collect();
    SceneView { size: w, rgba, boxes }
}

/// Renders scene `seed` and applies the given transforms in pipeline order
/// (flip, rotate, zoom, brightness, contrast).
#[wasm_bindgen]
pub fn augmented_scene(
    seed: u64,
    flip: bool,
    rotation_deg: f64,
    zoom_factor: f64,
    brightness: f64,
    contrast: f64,
) -> Result<SceneView, JsError> {
    if !(zoom_factor > 0.0) {
        return Err(JsError::new("zoom factor must be positive"));
    }
    let mut rng = Rng::new(seed);
    let mut s = render_scene(&SceneSpec::default(), &mut rng, format!("demo-{seed}")).sample;
    if flip {
        s = hflip(&s);
    }
    if rotation_deg != 0.0 {
        s = rotate(&s, rotation_deg);
    }
    if zoom_factor != 1.0 {
        s = zoom(&s, zoom_factor);
    }
    if brightness != 0.0 {
        s = adjust_brightness(&s, brightness);
    }
    if contrast != 1.0 {
        s = adjust_contrast(&s, contrast);
    }
    Ok(to_view(&s))
}

/// IoU of two `(cx, cy, w, h)` boxes.
#[wasm_bindgen]
pub fn box_iou(a: &[f64], b: &[f64]) -> Result<f64, JsError> {
    match (a, b) {
        ([ax, ay, aw, ah], [bx, by, bw, bh]) => Ok(iou(
            &BBox::new(*ax, *ay, *aw, *ah),
            &BBox::new(*bx, *by, *bw, *bh),
        )),
        _ => Err(JsError::new("boxes need four numbers each")),
    }
}

/// Matching and AP for one class on one image.
#[wasm_bindgen]
pub struct PrView {
    ap: f64,
    is_tp: Vec<u8>,
    curve: Vec<f64>,
    envelope: Vec<f64>,
}

#[wasm_bindgen]
impl PrView {
    #[wasm_bindgen(getter)]
    pub fn ap(&self) -> f64 {
        self.ap
    }

    /// 1 per matched detection, in input order.
    pub fn is_tp(&self) -> Vec<u8> {
        self.is_tp.clone()
    }

    /// Flat `(recall, precision)` pairs along the descending-confidence sweep.
    pub fn curve(&self) -> Vec<f64> {
        self.curve.clone()
    }

    pub fn envelope(&self) -> Vec<f64> {
        self.envelope.clone()
    }
}

/// `detections` holds `[confidence, cx, cy, w, h]` records, `ground_truth`
/// holds `[cx, cy, w, h]` records.
#[wasm_bindgen]
pub fn pr_explorer(detections: &[f64], ground_truth: &[f64], iou_threshold: f64) -> Result<PrView, JsError> {
    if detections.len() % 5 != 0 || ground_truth.len() % 4 != 0 {
        return Err(JsError::new("detections need 5 numbers each, ground truth 4"));
    }
    if ground_truth.is_empty() {
        return Err(JsError::new("AP is undefined without ground truth"));
    }
    let dets: Vec<Detection> = detections
        .chunks_exact(5)
        .map(|d| Detection {
            class_id: 0,
            bbox: BBox::new(d[1], d[2], d[3], d[4]),
            confidence: d[0],
        })
        .collect();
    let gts: Vec<BBox> = ground_truth
        .chunks_exact(4)
        .map(|g| BBox::new(g[0], g[1], g[2], g[3]))
        .collect();
    let m = match_detections(&dets, &gts, iou_threshold);
    let flags: Vec<ScoredFlag> = dets
        .iter()
        .zip(&m.is_tp)
        .map(|(d, &is_tp)| ScoredFlag {
            confidence: d.confidence,
            is_tp,
        })
        .collect();
    let err = |e: hybdet::Error| JsError::new(&e.to_string());
    let pr = PrCurve::from_flags(&flags, gts.len()).map_err(err)?;
    let flat = |pts: Vec<(f64, f64)>| pts.into_iter().flat_map(|(r, p)| [r, p]).collect();
    Ok(PrView {
        ap: average_precision(&flags, gts.len()).map_err(err)?,
        is_tp: m.is_tp.iter().map(|&t| t as u8).collect(),
        curve: flat(pr.points.clone()),
        envelope: flat(pr.envelope()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scene_view_layout() {
        let v = augmented_scene(3, false, 0.0, 1.0, 0.0, 1.0).ok().unwrap();
        assert_eq!(v.rgba().len(), 4 * 64 * 64);
        assert_eq!(v.boxes().len() % 5, 0);
        assert!(!v.boxes().is_empty());
    }

    #[test]
    fn flip_mirrors_centers() {
        let a = augmented_scene(5, false, 0.0, 1.0, 0.0, 1.0).ok().unwrap().boxes();
        let b = augmented_scene(5, true, 0.0, 1.0, 0.0, 1.0).ok().unwrap().boxes();
        for (x, y) in a.chunks(5).zip(b.chunks(5)) {
            assert_eq!(y[1], 1.0 - x[1]);
        }
    }

    #[test]
    fn explorer_fixture() {
        // three detections ranked TP, FP, TP against two ground truths → AP 5/6
        let gt = [0.2, 0.2, 0.1, 0.1, 0.7, 0.7, 0.1, 0.1];
        let dets = [0.9, 0.2, 0.2, 0.1, 0.1, 0.8, 0.5, 0.5, 0.1, 0.1, 0.7, 0.7, 0.7, 0.1, 0.1];
        let v = pr_explorer(&dets, &gt, 0.5).ok().unwrap();
        assert!((v.ap() - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(v.is_tp(), vec![1, 0, 1]);
        assert_eq!(v.envelope().len(), 6);
    }

    #[test]
    fn iou_binding() {
        assert_eq!(box_iou(&[0.5, 0.5, 0.2, 0.2], &[0.5, 0.5, 0.2, 0.2]).ok(), Some(1.0));
    }
}
