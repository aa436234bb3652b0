use crate::error::{invalid, Error, Result};
use crate::tensor::Tensor;

/// Bilinear resample of a `C×H×W` image with half-pixel centers and
/// edge-clamped sampling.
pub fn bilinear_resize(image: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let &[c, h, w] = image.shape() else {
        return Err(Error::Shape {
            what: "resize needs a C×H×W image",
            left: image.shape().to_vec(),
            right: vec![],
        });
    };
    if out_h == 0 || out_w == 0 {
        return Err(invalid("resize target must be positive"));
    }
    let axis = |out: usize, inp: usize| -> Vec<(usize, usize, f64)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
                let lo = src.floor() as usize;
                let hi = (lo + 1).min(inp - 1);
                (lo, hi, src - lo as f64)
            })
            .collect()
    };
    let rows = axis(out_h, h);
    let cols = axis(out_w, w);
    let src = image.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for &(r0, r1, fy) in &rows {
            for &(c0, c1, fx) in &cols {
                let top = plane[r0 * w + c0] * (1.0 - fx) + plane[r0 * w + c1] * fx;
                let bottom = plane[r1 * w + c0] * (1.0 - fx) + plane[r1 * w + c1] * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Tensor::new(&[c, out_h, out_w], out)
}

/// Square resize to the model input size. Labels are normalized, so they are
/// unaffected.
pub fn preprocess(image: &Tensor, target: usize) -> Result<Tensor> {
    if target == 0 {
        return Err(invalid("preprocess target size must be positive"));
    }
    let out = bilinear_resize(image, target, target)?;
    Ok(out.map(|v| v.clamp(0.0, 1.0)))
}
