use std::fmt::Write;

use crate::boxes::{BBox, GroundTruth};
use crate::error::{Error, Result};

/// Parses `class_id cx cy w h` lines; blank lines are skipped.
pub fn parse_label_file(text: &str) -> Result<Vec<GroundTruth>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let err = |msg: String| Error::Parse { line: line_no, msg };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 5 {
            return Err(err(format!("expected 5 fields, found {}", fields.len())));
        }
        let class_id = fields[0]
            .parse::<usize>()
            .map_err(|_| err(format!("class id {:?} is not a non-negative integer", fields[0])))?;
        let mut v = [0.0; 4];
        for (k, name) in ["cx", "cy", "w", "h"].iter().enumerate() {
            let x = fields[k + 1]
                .parse::<f64>()
                .map_err(|_| err(format!("{name} {:?} is not a number", fields[k + 1])))?;
            if !(0.0..=1.0).contains(&x) {
                return Err(err(format!("{name}={x} outside [0,1]")));
            }
            v[k] = x;
        }
        if v[2] <= 0.0 || v[3] <= 0.0 {
            return Err(err("box width and height must be positive".into()));
        }
        out.push(GroundTruth {
            class_id,
            bbox: BBox::new(v[0], v[1], v[2], v[3]),
        });
    }
    Ok(out)
}

/// Inverse of [`parse_label_file`]; floats use shortest round-trip form.
pub fn render_label_file(labels: &[GroundTruth]) -> String {
    let mut s = String::new();
    for g in labels {
        let b = g.bbox;
        writeln!(s, "{} {} {} {} {}", g.class_id, b.cx, b.cy, b.w, b.h).unwrap();
    }
    s
}
