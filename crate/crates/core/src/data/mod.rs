//! Dataset ingestion, preprocessing, augmentation and synthetic scenes.

mod augment;
mod dataset;
mod labels;
mod ppm;
mod preprocess;
pub mod rng;
mod split;
mod synth;

use crate::boxes::GroundTruth;
use crate::tensor::Tensor;

pub use augment::{
    adjust_brightness, adjust_contrast, augment, hflip, rotate, rotated_hull, zoom, AugmentPolicy,
    MIN_KEPT_AREA_FRACTION,
};
pub use dataset::{load_dir, write_dir, IMAGES_DIR, LABELS_DIR};
pub use labels::{parse_label_file, render_label_file};
pub use ppm::{encode_ppm, load_image_ppm};
pub use preprocess::{bilinear_resize, preprocess};
pub use rng::Rng;
pub use split::split_dataset;
pub use synth::{generate_synthetic, render_scene, RenderedObject, RenderedScene, SceneSpec, ShapeKind};

/// An RGB image (`3×H×W`, values in `[0,1]`) with its labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Tensor,
    pub labels: Vec<GroundTruth>,
    pub source: String,
}

impl Sample {
    pub fn height(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[2]
    }
}
