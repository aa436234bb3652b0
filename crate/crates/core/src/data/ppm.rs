//! Binary PPM (`P6`, maxval 255) codec.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

/// Reads the next whitespace-delimited header token, skipping `#` comments.
fn header_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(format_err("truncated PPM header"));
    }
    Ok(&bytes[start..*pos])
}

fn header_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    let tok = header_token(bytes, pos)?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .filter(|&v: &usize| v > 0)
        .ok_or_else(|| format_err(format!("invalid PPM {what}")))
}

/// Decodes to a `3×H×W` tensor with values `p/255`.
pub fn load_image_ppm(bytes: &[u8]) -> Result<Tensor> {
    let mut pos = 0;
    if header_token(bytes, &mut pos)? != b"P6" {
        return Err(format_err("not a binary PPM (magic must be P6)"));
    }
    let width = header_number(bytes, &mut pos, "width")?;
    let height = header_number(bytes, &mut pos, "height")?;
    let maxval = header_number(bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(format_err(format!("unsupported PPM maxval {maxval}, need 255")));
    }
    // exactly one whitespace byte separates the header from the payload
    pos += 1;
    let n = width * height;
    let payload = bytes
        .get(pos..)
        .filter(|p| p.len() >= 3 * n)
        .ok_or_else(|| format_err(format!("truncated PPM payload: need {} bytes", 3 * n)))?;
    let mut data = vec![0.0; 3 * n];
    for (i, px) in payload[..3 * n].chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * n + i] = px[c] as f64 / 255.0;
        }
    }
    Tensor::new(&[3, height, width], data)
}

/// Encodes a `3×H×W` tensor, rounding to the nearest 8-bit level.
pub fn encode_ppm(image: &Tensor) -> Result<Vec<u8>> {
    let &[3, h, w] = image.shape() else {
        return Err(Error::Shape {
            what: "PPM encoder needs a 3×H×W image",
            left: image.shape().to_vec(),
            right: vec![3],
        });
    };
    let n = h * w;
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(3 * n);
    let d = image.data();
    for i in 0..n {
        for c in 0..3 {
            out.push((d[c * n + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(out)
}
