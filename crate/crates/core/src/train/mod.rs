//! Adam, the seeded epoch/batch loop and the evaluation driver.

mod adam;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::{GradTape, ParamId};
use crate::boxes::{Detection, GroundTruth};
use crate::data::rng::derive_seed;
use crate::data::{augment, AugmentPolicy, Rng, Sample};
use crate::detector::{
    decode_predictions, detection_loss_on_tape, non_max_suppression, LossWeights, Model,
};
use crate::error::{invalid, Error, Result};
use crate::metrics::{map50, MetricsReport, DEFAULT_OPERATING_THRESHOLD};
use crate::ops::Mode;
use crate::tensor::Tensor;

pub use adam::{adam_step, clip_global_norm, AdamHyper, AdamState};

pub const DEFAULT_CLIP_NORM: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamHyper,
    pub seed: u64,
    pub conf_threshold: f64,
    pub loss: LossWeights,
    /// Global-norm gradient clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub augment: AugmentPolicy,
    /// IoU for suppressing duplicate detections at evaluation; `None` keeps all.
    pub nms_iou: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            batch_size: 16,
            adam: AdamHyper::default(),
            seed: 42,
            conf_threshold: DEFAULT_OPERATING_THRESHOLD,
            loss: LossWeights::default(),
            clip_norm: Some(DEFAULT_CLIP_NORM),
            augment: AugmentPolicy::default(),
            nms_iou: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.conf_threshold) {
            return Err(Error::Config(format!(
                "confidence threshold {} outside [0,1]",
                self.conf_threshold
            )));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::Config("clip norm must be positive".into()));
            }
        }
        if let Some(t) = self.nms_iou {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Config("nms IoU outside [0,1]".into()));
            }
        }
        self.adam.validate()?;
        self.augment.validate()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epoch_losses: Vec<f64>,
    pub train_seconds: f64,
    /// Mean per-image inference time over the test set, once evaluated.
    pub infer_ms: Option<f64>,
    pub flops: u64,
}

impl TrainLog {
    /// `epoch,loss` lines.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss\n");
        for (i, l) in self.epoch_losses.iter().enumerate() {
            out.push_str(&format!("{},{l}\n", i + 1));
        }
        out
    }
}

fn stack_batch(samples: &[Sample]) -> Result<Tensor> {
    let images: Vec<&Tensor> = samples.iter().map(|s| &s.image).collect();
    Tensor::stack(&images)
}

/// Epoch `e` batches: the seeded permutation cut into `batch_size` chunks,
/// with the last partial chunk kept.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    Rng::derive(seed, epoch as u64).shuffle(&mut order);
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Augmented samples of one batch; each sample draws its own derived stream.
fn prepare_batch(train_set: &[Sample], idx: &[usize], config: &TrainConfig, epoch: usize) -> Vec<Sample> {
    let epoch_seed = derive_seed(config.seed ^ config.augment.seed, epoch as u64);
    idx.iter()
        .map(|&i| {
            let mut rng = Rng::derive(epoch_seed, i as u64);
            augment(&train_set[i], &config.augment, &mut rng)
        })
        .collect()
}

/// One forward/backward/update on a batch; returns the batch loss.
pub fn train_step(
    model: &mut Model,
    batch: &[Sample],
    state: &mut AdamState,
    config: &TrainConfig,
) -> Result<f64> {
    let input = stack_batch(batch)?;
    let targets: Vec<Vec<GroundTruth>> = batch.iter().map(|s| s.labels.clone()).collect();
    let saved = model.buffers().to_vec();
    let mut tape = GradTape::new();
    let x = tape.leaf(input);
    let step = model.forward_on_tape(&mut tape, x, Mode::Train).and_then(|trace| {
        let boxes = model.detector_config().boxes_per_cell;
        detection_loss_on_tape(&mut tape, trace.output, &targets, boxes, config.loss)
    });
    let loss = match step {
        Ok(l) => l,
        Err(e) => {
            model.restore_buffers(saved);
            return Err(e);
        }
    };
    let value = tape.value(loss).item();
    let mut grads = tape.backward(loss)?.into_params();
    let mut flat: Vec<Tensor> = (0..model.params().len())
        .map(|i| grads.remove(&ParamId(i)).expect("every parameter is registered"))
        .collect();
    if let Some(max) = config.clip_norm {
        clip_global_norm(&mut flat, max);
    }
    adam_step(model.params_mut(), &flat, state, &config.adam)?;
    Ok(value)
}

/// Trains `model` in place.
pub fn train(model: &mut Model, train_set: &[Sample], config: &TrainConfig) -> Result<TrainLog> {
    if train_set.is_empty() {
        return Err(Error::EmptyDataset("training set"));
    }
    config.validate()?;
    if config.batch_size > train_set.len() {
        return Err(Error::Config(format!(
            "batch size {} exceeds training set of {}",
            config.batch_size,
            train_set.len()
        )));
    }
    let size = model.detector_config().input_size;
    if let Some(s) = train_set.iter().find(|s| s.height() != size || s.width() != size) {
        return Err(invalid(format!(
            "sample {} is {}×{}, model expects {size}×{size}",
            s.source,
            s.height(),
            s.width()
        )));
    }
    let start = Instant::now();
    let mut state = AdamState::new(model.params());
    let mut log = TrainLog {
        flops: model.flops(),
        ..TrainLog::default()
    };
    for epoch in 0..config.epochs {
        let mut total = 0.0;
        let mut seen = 0usize;
        for idx in epoch_batches(train_set.len(), config.batch_size, config.seed, epoch) {
            let batch = prepare_batch(train_set, &idx, config, epoch);
            match train_step(model, &batch, &mut state, config) {
                Ok(loss) => {
                    total += loss * batch.len() as f64;
                    seen += batch.len();
                }
                Err(Error::DegenerateBatch(n)) => {
                    log::warn!("epoch {}: skipping degenerate batch of {n} sample(s)", epoch + 1);
                }
                Err(e) => return Err(e),
            }
        }
        let mean = if seen > 0 { total / seen as f64 } else { f64::NAN };
        log::debug!("epoch {} loss {mean:.6}", epoch + 1);
        log.epoch_losses.push(mean);
        if !model.all_finite() {
            return Err(Error::InvalidArgument(format!(
                "parameters diverged at epoch {}",
                epoch + 1
            )));
        }
    }
    log.train_seconds = start.elapsed().as_secs_f64();
    Ok(log)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub infer_ms: f64,
    pub detections: Vec<Vec<Detection>>,
}

/// Detections for one preprocessed image, every box kept for the AP sweep.
pub fn detect(model: &Model, image: &Tensor, nms_iou: Option<f64>) -> Result<Vec<Detection>> {
    let [c, h, w] = image.shape().try_into().map_err(|_| invalid("detect needs a C×H×W image"))?;
    let raw = model.predict(&image.clone().reshape(&[1, c, h, w])?)?;
    let s = model.detector_config().grid_size;
    let ch = raw.shape()[1];
    let dets = decode_predictions(&raw.reshape(&[ch, s, s])?, model.detector_config().boxes_per_cell, 0.0)?;
    Ok(match nms_iou {
        Some(t) => non_max_suppression(dets, t),
        None => dets,
    })
}

/// Scores given detections against the set's labels over all model classes.
pub fn score_detections(
    detections: &[Vec<Detection>],
    test_set: &[Sample],
    num_classes: usize,
    conf_threshold: f64,
) -> Result<MetricsReport> {
    let gts: Vec<Vec<GroundTruth>> = test_set.iter().map(|s| s.labels.clone()).collect();
    let classes: Vec<usize> = (0..num_classes).collect();
    map50(detections, &gts, &classes, conf_threshold)
}

/// Infer-mode evaluation; the model is not modified.
pub fn evaluate(
    model: &Model,
    test_set: &[Sample],
    conf_threshold: f64,
    nms_iou: Option<f64>,
) -> Result<Evaluation> {
    if test_set.is_empty() {
        return Err(Error::EmptyDataset("test set"));
    }
    let mut detections = Vec::with_capacity(test_set.len());
    let start = Instant::now();
    for s in test_set {
        detections.push(detect(model, &s.image, nms_iou)?);
    }
    let infer_ms = start.elapsed().as_secs_f64() * 1e3 / test_set.len() as f64;
    let report = score_detections(
        &detections,
        test_set,
        model.detector_config().num_classes,
        conf_threshold,
    )?;
    Ok(Evaluation {
        report,
        infer_ms,
        detections,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SceneSpec};
    use crate::detector::DetectorConfig;

    fn tiny_model(seed: u64) -> Model {
        let mut det = DetectorConfig::desk(2, false);
        det.input_size = 16;
        det.stem = vec![
            crate::detector::StemLayer { out_channels: 4, stride: 2 },
            crate::detector::StemLayer { out_channels: 4, stride: 2 },
        ];
        Model::build(det, None, seed).unwrap()
    }

    fn tiny_data(n: usize) -> Vec<Sample> {
        let spec = SceneSpec {
            canvas: 16,
            radius_range: (2.5, 3.5),
            ..SceneSpec::default()
        };
        generate_synthetic(5, n, &spec)
    }

    fn quick_config() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            batch_size: 4,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn empty_dataset_rejected() {
        let mut m = tiny_model(1);
        assert!(matches!(train(&mut m, &[], &quick_config()), Err(Error::EmptyDataset(_))));
        assert!(matches!(evaluate(&m, &[], 0.25, None), Err(Error::EmptyDataset(_))));
    }

    #[test]
    fn batch_larger_than_set_rejected() {
        let mut m = tiny_model(1);
        let cfg = TrainConfig { batch_size: 64, ..quick_config() };
        assert!(train(&mut m, &tiny_data(8), &cfg).is_err());
    }

    #[test]
    fn batches_cover_every_sample_once() {
        let b = epoch_batches(10, 4, 3, 0);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_ne!(epoch_batches(10, 4, 3, 0), epoch_batches(10, 4, 3, 1));
    }

    #[test]
    fn deterministic_training() {
        let data = tiny_data(9);
        let (mut a, mut b) = (tiny_model(2), tiny_model(2));
        let la = train(&mut a, &data, &quick_config()).unwrap();
        let lb = train(&mut b, &data, &quick_config()).unwrap();
        assert_eq!(la.epoch_losses, lb.epoch_losses);
        assert_eq!(a.state_bytes(), b.state_bytes());
        assert_eq!(la.epoch_losses.len(), 3);
        assert!(a.all_finite());
    }

    #[test]
    fn evaluate_is_pure() {
        let data = tiny_data(6);
        let m = tiny_model(3);
        let before = m.state_bytes();
        let e1 = evaluate(&m, &data, 0.25, None).unwrap();
        let e2 = evaluate(&m, &data, 0.25, None).unwrap();
        assert_eq!(m.state_bytes(), before);
        assert_eq!(e1.report, e2.report);
        assert_eq!(e1.detections, e2.detections);
    }

    #[test]
    fn perfect_detections_score_one() {
        let data = tiny_data(12);
        let dets: Vec<Vec<Detection>> = data
            .iter()
            .map(|s| {
                s.labels
                    .iter()
                    .map(|g| Detection { class_id: g.class_id, bbox: g.bbox, confidence: 0.9 })
                    .collect()
            })
            .collect();
        let r = score_detections(&dets, &data, 2, 0.25).unwrap();
        assert_eq!(r.map50, 1.0);
        assert_eq!(r.precision, Some(1.0));
        assert_eq!(r.recall, Some(1.0));
    }

    #[test]
    fn trainlog_csv() {
        let log = TrainLog { epoch_losses: vec![1.5, 0.25], ..TrainLog::default() };
        assert_eq!(log.to_csv(), "epoch,loss\n1,1.5\n2,0.25\n");
    }
}
