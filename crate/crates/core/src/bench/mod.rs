//! Hybrid vs plain A/B harness and its CSV/Markdown reports.

mod report;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::rng::derive_seed;
use crate::data::{generate_synthetic, load_dir, preprocess, split_dataset, Sample, SceneSpec};
use crate::detector::{checkpoint, DetectorConfig, HybridBlockConfig, Model};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::train::{evaluate, train, Evaluation, TrainConfig, TrainLog};

pub use report::{parse_report_csv, render_report, BenchReport, BenchRow, ReportFormat, CSV_HEADER};

pub const HYBRID: &str = "hybrid";
pub const PLAIN: &str = "plain";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum DatasetSource {
    Synthetic { spec: SceneSpec, samples: usize },
    Directory { path: PathBuf },
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synthetic {
            spec: SceneSpec::default(),
            samples: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub dataset: DatasetSource,
    /// Shared detector settings; `with_hybrid` is set per leg.
    pub detector: DetectorConfig,
    pub hybrid: HybridBlockConfig,
    pub train: TrainConfig,
    pub train_fraction: f64,
    /// Master seed for data, split, initialization and training order.
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub formats: Vec<ReportFormat>,
    /// Train the two legs on separate threads.
    pub parallel: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSource::default(),
            detector: DetectorConfig::desk(SceneSpec::default().num_classes(), true),
            hybrid: HybridBlockConfig::default(),
            train: TrainConfig::default(),
            train_fraction: 0.8,
            seed: 42,
            output_dir: None,
            formats: vec![ReportFormat::Csv, ReportFormat::Markdown],
            parallel: false,
        }
    }
}

#[derive(Serialize)]
struct Fingerprinted<'a> {
    dataset: &'a DatasetSource,
    detector: &'a DetectorConfig,
    hybrid: &'a HybridBlockConfig,
    train: &'a TrainConfig,
    train_fraction: f64,
    seed: u64,
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        self.detector.validate()?;
        self.hybrid.validate()?;
        self.train.validate()?;
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train_fraction {} outside (0,1)",
                self.train_fraction
            )));
        }
        Ok(())
    }

    /// Short SHA-256 of every field that affects results.
    pub fn fingerprint(&self) -> Result<String> {
        let json = serde_json::to_vec(&Fingerprinted {
            dataset: &self.dataset,
            detector: &self.detector,
            hybrid: &self.hybrid,
            train: &self.train,
            train_fraction: self.train_fraction,
            seed: self.seed,
        })?;
        let digest = Sha256::digest(&json);
        Ok(digest[..8].iter().map(|b| format!("{b:02x}")).collect())
    }

    fn leg_detector(&self, with_hybrid: bool) -> DetectorConfig {
        DetectorConfig {
            with_hybrid,
            ..self.detector.clone()
        }
    }

    fn leg_train(&self) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(self.seed, 3),
            ..self.train.clone()
        }
    }
}

/// Loads or generates the dataset at the detector's input size.
pub fn load_dataset(config: &BenchConfig) -> Result<Vec<Sample>> {
    let size = config.detector.input_size;
    match &config.dataset {
        DatasetSource::Synthetic { spec, samples } => {
            let mut data = generate_synthetic(derive_seed(config.seed, 0), *samples, spec);
            if spec.canvas != size {
                for s in &mut data {
                    s.image = preprocess(&s.image, size)?;
                }
            }
            Ok(data)
        }
        DatasetSource::Directory { path } => load_dir(path, size),
    }
}

/// One trained leg of the comparison.
#[derive(Clone, Debug)]
pub struct Leg {
    pub name: &'static str,
    pub model: Model,
    pub log: TrainLog,
    pub evaluation: Evaluation,
}

impl Leg {
    fn row(&self) -> BenchRow {
        let r = &self.evaluation.report;
        BenchRow {
            model: self.name.to_string(),
            precision: r.precision,
            recall: r.recall,
            map50: Some(r.map50),
            train_s: self.log.train_seconds,
            test_ms: self.evaluation.infer_ms,
            flops: self.model.flops(),
            params: self.model.parameter_count() as u64,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BenchRun {
    pub report: BenchReport,
    pub legs: Vec<Leg>,
}

fn run_leg(
    name: &'static str,
    det: &DetectorConfig,
    config: &BenchConfig,
    train_set: &[Sample],
    test_set: &[Sample],
) -> Result<Leg> {
    let tc = config.leg_train();
    let mut model = Model::build(det.clone(), det.with_hybrid.then(|| config.hybrid.clone()), derive_seed(config.seed, 2))?;
    log::info!("training {name}: {} params, {} FLOPs", model.parameter_count(), model.flops());
    let mut log = train(&mut model, train_set, &tc)?;
    let evaluation = evaluate(&model, test_set, tc.conf_threshold, tc.nms_iou)?;
    log.infer_ms = Some(evaluation.infer_ms);
    log::info!("{name}: mAP@50 {:.3}", evaluation.report.map50);
    Ok(Leg {
        name,
        model,
        log,
        evaluation,
    })
}

/// Trains and evaluates the hybrid and plain detectors on one shared split.
pub fn run_benchmark(config: &BenchConfig) -> Result<BenchRun> {
    config.validate()?;
    let data = load_dataset(config)?;
    let (train_set, test_set) = split_dataset(&data, config.train_fraction, derive_seed(config.seed, 1))?;
    let hybrid_det = config.leg_detector(true);
    let plain_det = config.leg_detector(false);
    let (hybrid, plain) = if config.parallel {
        std::thread::scope(|s| {
            let h = s.spawn(|| run_leg(HYBRID, &hybrid_det, config, &train_set, &test_set));
            let p = run_leg(PLAIN, &plain_det, config, &train_set, &test_set);
            (h.join().expect("hybrid leg panicked"), p)
        })
    } else {
        (
            run_leg(HYBRID, &hybrid_det, config, &train_set, &test_set),
            run_leg(PLAIN, &plain_det, config, &train_set, &test_set),
        )
    };
    let legs = vec![hybrid?, plain?];
    let report = assemble(config, &legs, train_set.len(), test_set.len())?;
    Ok(BenchRun { report, legs })
}

fn assemble(config: &BenchConfig, legs: &[Leg], train_samples: usize, test_samples: usize) -> Result<BenchReport> {
    let [h, p] = legs else {
        return Err(Error::InvalidArgument("expected a hybrid and a plain leg".into()));
    };
    let (hd, pd) = (h.model.detector_config(), p.model.detector_config());
    if !hd.with_hybrid || pd.with_hybrid || config.leg_detector(false) != *pd || config.leg_detector(true) != *hd {
        return Err(Error::Config("legs differ in more than the hybrid flag".into()));
    }
    if h.model.flops() <= p.model.flops() || h.model.parameter_count() <= p.model.parameter_count() {
        return Err(Error::Config(
            "hybrid leg must cost strictly more FLOPs and parameters than plain".into(),
        ));
    }
    Ok(BenchReport {
        rows: legs.iter().map(Leg::row).collect(),
        fingerprint: config.fingerprint()?,
        seed: config.seed,
        epochs: config.train.epochs,
        train_samples,
        test_samples,
    })
}

/// Writes reports, checkpoints and training logs into `dir`.
pub fn write_outputs(run: &BenchRun, formats: &[ReportFormat], dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let mut put = |name: String, bytes: &[u8]| -> Result<()> {
        let path = dir.join(name);
        write_atomic(&path, bytes)?;
        written.push(path);
        Ok(())
    };
    for &f in formats {
        put(format!("report.{}", f.extension()), render_report(&run.report, f).as_bytes())?;
    }
    for leg in &run.legs {
        put(format!("checkpoint-{}.bin", leg.name), &checkpoint::to_bytes(&leg.model)?)?;
        put(format!("trainlog-{}.csv", leg.name), leg.log.to_csv().as_bytes())?;
    }
    Ok(written)
}

fn set_path(root: &mut serde_json::Value, key: &str, value: serde_json::Value) -> Result<()> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("{key}: {part:?} is not a section")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
        if node.is_null() {
            *node = serde_json::Value::Object(Default::default());
        }
    }
    Ok(())
}

impl BenchConfig {
    /// Parses a JSON document or `dotted.key = value` lines over the defaults.
    ///
    /// Values are read as JSON when possible and as strings otherwise;
    /// `#` starts a comment line.
    pub fn from_text(text: &str) -> Result<Self> {
        if text.trim_start().starts_with('{') {
            let config: Self = serde_json::from_str(text)?;
            return Ok(config);
        }
        let mut root = serde_json::to_value(Self::default())?;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(Error::Parse {
                line: i + 1,
                msg: "expected key = value".into(),
            })?;
            let value = value.trim();
            let parsed = serde_json::from_str(value)
                .unwrap_or_else(|_| serde_json::Value::String(value.to_string()));
            set_path(&mut root, key.trim(), parsed).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
        }
        serde_json::from_value(root).map_err(|e| Error::Config(e.to_string()))
    }
}
