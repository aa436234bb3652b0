//! `images/*.ppm` + `labels/*.txt` directory layout.

use std::fs;
use std::path::Path;

use super::labels::{parse_label_file, render_label_file};
use super::ppm::{encode_ppm, load_image_ppm};
use super::preprocess::preprocess;
use super::Sample;
use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const IMAGES_DIR: &str = "images";
pub const LABELS_DIR: &str = "labels";

/// Loads every `images/<name>.ppm` with `labels/<name>.txt`, sorted by name,
/// resized to `input_size`.
pub fn load_dir(root: &Path, input_size: usize) -> Result<Vec<Sample>> {
    let mut names: Vec<String> = fs::read_dir(root.join(IMAGES_DIR))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let p = e.path();
            (p.extension().is_some_and(|x| x == "ppm"))
                .then(|| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
                .flatten()
        })
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|name| {
            let image = load_image_ppm(&fs::read(root.join(IMAGES_DIR).join(format!("{name}.ppm")))?)?;
            let label_path = root.join(LABELS_DIR).join(format!("{name}.txt"));
            let text = fs::read_to_string(&label_path).map_err(|e| {
                Error::Format(format!("{}: {e}", label_path.display()))
            })?;
            let labels = parse_label_file(&text).map_err(|e| match e {
                Error::Parse { line, msg } => Error::Parse {
                    line,
                    msg: format!("{}: {msg}", label_path.display()),
                },
                other => other,
            })?;
            Ok(Sample {
                image: preprocess(&image, input_size)?,
                labels,
                source: name,
            })
        })
        .collect()
}

pub fn write_dir(root: &Path, samples: &[Sample]) -> Result<()> {
    fs::create_dir_all(root.join(IMAGES_DIR))?;
    fs::create_dir_all(root.join(LABELS_DIR))?;
    for s in samples {
        write_atomic(&root.join(IMAGES_DIR).join(format!("{}.ppm", s.source)), &encode_ppm(&s.image)?)?;
        write_atomic(
            &root.join(LABELS_DIR).join(format!("{}.txt", s.source)),
            render_label_file(&s.labels).as_bytes(),
        )?;
    }
    Ok(())
}
