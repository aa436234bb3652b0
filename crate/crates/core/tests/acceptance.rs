//! One PASS/FAIL line per acceptance criterion; exits non-zero on any failure.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use common::{oracle_hull, oracle_map, random_scenes};
use hybdet::bench::{render_report, run_benchmark, BenchConfig, ReportFormat, HYBRID, PLAIN};
use hybdet::data::{augment, hflip, rotated_hull, AugmentPolicy, Rng, Sample};
use hybdet::detector::{DetectorConfig, HybridBlockConfig, HybridLayer, Model, StemLayer, IMAGE_CHANNELS};
use hybdet::gradcheck::{run_suite, GradCheckConfig};
use hybdet::metrics::{average_precision, f1, map50, precision_recall, MatchCounts, ScoredFlag};
use hybdet::{BBox, GroundTruth, Tensor};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let cfg = GradCheckConfig::default();
    let reports = match run_suite(&cfg) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("suite error: {e}")),
    };
    let secs = start.elapsed().as_secs_f64();
    let worst = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    let trials = reports.iter().map(|r| r.trials).min().unwrap_or(0);
    let ok = failed.is_empty() && worst <= 1e-4 && trials >= 100 && secs < 120.0 && reports.iter().any(|r| r.name.contains("loss"));
    outcome(
        ok,
        format!(
            "{} checks, ≥{trials} trials each, worst rel error {worst:.2e}, {secs:.1} s{}",
            reports.len(),
            if failed.is_empty() { String::new() } else { format!(", failed: {failed:?}") }
        ),
    )
}

fn metrics_oracle() -> Outcome {
    let mut rng = Rng::new(0xacce);
    let (mut compared, mut worst) = (0, 0.0f64);
    let mut ok = true;
    for _ in 0..1500 {
        let (dets, gts, classes) = random_scenes(&mut rng);
        let cl: Vec<usize> = (0..classes).collect();
        match (map50(&dets, &gts, &cl, 0.25), oracle_map(&dets, &gts, classes, 0.5)) {
            (Ok(r), Some(want)) => {
                worst = worst.max((r.map50 - want).abs());
                compared += 1;
            }
            (Err(_), None) => {}
            _ => ok = false,
        }
    }
    let flags = [(0.9, true), (0.8, false), (0.7, true)].map(|(confidence, is_tp)| ScoredFlag { confidence, is_tp });
    let fixture = average_precision(&flags, 2).ok();
    let ok = ok && compared >= 1000 && worst <= 1e-9 && fixture == Some(5.0 / 6.0);
    outcome(ok, format!("{compared} scenes compared, max |Δ| {worst:.1e}; [TP,FP,TP]/2 GT AP = {fixture:?}"))
}

fn formula_fixtures() -> Outcome {
    let (p, r) = precision_recall(MatchCounts::new(3, 1, 2));
    let f = f1(p, r);
    let near = |x: Option<f64>, want: f64| x.is_some_and(|v| (v - want).abs() < 5e-7);
    let ok = near(p, 0.75) && near(r, 0.6) && near(f, 2.0 / 3.0) && format!("{:.3}", f.unwrap_or(0.0)) == "0.667";
    outcome(ok, format!("(3,1,2) → P {p:?}, R {r:?}, F1 {f:?}"))
}

fn random_pair(rng: &mut Rng) -> (DetectorConfig, HybridBlockConfig) {
    let stem: Vec<StemLayer> = (0..rng.range_inclusive(1, 3))
        .map(|_| StemLayer { out_channels: rng.range_inclusive(1, 16), stride: 2 })
        .collect();
    let grid = rng.range_inclusive(1, 4);
    let det = DetectorConfig {
        grid_size: grid,
        boxes_per_cell: rng.range_inclusive(1, 2),
        num_classes: rng.range_inclusive(1, 4),
        input_size: grid << stem.len(),
        with_hybrid: true,
        stem,
        slope: 0.1,
    };
    let hybrid = HybridBlockConfig {
        layers: (0..3)
            .map(|_| {
                let k = [1, 3, 5][rng.range_inclusive(0, 2)];
                let padding = if rng.bernoulli(0.8) { k / 2 } else { rng.range_inclusive(0, k) };
                HybridLayer { out_channels: rng.range_inclusive(1, 16), kernel_size: k, padding }
            })
            .collect(),
        slope: 0.1,
    };
    (det, hybrid)
}

fn cost_ordering() -> Outcome {
    let mut rng = Rng::new(4);
    let (mut checked, mut rejected) = (0, 0);
    for _ in 0..3000 {
        let (det, hybrid) = random_pair(&mut rng);
        let Ok(p) = Model::build(DetectorConfig { with_hybrid: false, ..det.clone() }, None, 1) else {
            return outcome(false, "a valid plain config failed to build");
        };
        let h = match Model::build(det, Some(hybrid.clone()), 1) {
            Ok(h) => h,
            Err(_) => {
                // only blocks that narrow or shrink the stem input may be refused
                let narrows = hybrid.layers[2].out_channels < IMAGE_CHANNELS;
                let shrinks = hybrid.layers.iter().any(|l| 2 * l.padding < l.kernel_size - 1);
                let grows = hybrid.layers.iter().any(|l| 2 * l.padding > l.kernel_size - 1);
                if !(narrows || shrinks || grows) {
                    return outcome(false, "a same-padded, ≥3-channel hybrid block was refused");
                }
                rejected += 1;
                continue;
            }
        };
        if h.flops() <= p.flops() || h.parameter_count() <= p.parameter_count() {
            return outcome(
                false,
                format!(
                    "ordering violated: {}/{} FLOPs, {}/{} params",
                    h.flops(),
                    p.flops(),
                    h.parameter_count(),
                    p.parameter_count()
                ),
            );
        }
        checked += 1;
    }
    if checked < 500 {
        return outcome(false, format!("only {checked} buildable pairs sampled"));
    }
    let d = BenchConfig::default();
    let h = Model::build(d.detector.clone(), Some(d.hybrid.clone()), 0).unwrap();
    let p = Model::build(DetectorConfig { with_hybrid: false, ..d.detector.clone() }, None, 0).unwrap();
    outcome(
        true,
        format!(
            "{checked} buildable pairs ({rejected} narrowing/shrinking blocks refused); default pair {}/{} FLOPs, {}/{} params (hybrid/plain)",
            h.flops(),
            p.flops(),
            h.parameter_count(),
            p.parameter_count()
        ),
    )
}

fn desk_experiment() -> (Outcome, Option<String>) {
    let config = BenchConfig::default();
    let start = Instant::now();
    let run = match run_benchmark(&config) {
        Ok(r) => r,
        Err(e) => return (outcome(false, format!("bench error: {e}")), None),
    };
    let secs = start.elapsed().as_secs_f64();
    let score = |name: &str| run.report.rows.iter().find(|r| r.model == name).and_then(|r| r.map50);
    let (h, p) = (score(HYBRID), score(PLAIN));
    let good = |x: Option<f64>| x.is_some_and(|v| v >= 0.90);
    let epochs_ok = config.train.epochs <= 150 && run.legs.iter().all(|l| l.log.epoch_losses.len() == config.train.epochs);
    let converged = good(h) && good(p) && epochs_ok && secs <= 600.0;

    // same-seed reruns on a shortened schedule must agree byte for byte
    let short = BenchConfig { train: hybdet::train::TrainConfig { epochs: 3, ..config.train.clone() }, ..config.clone() };
    let rerun = || run_benchmark(&short).map(|r| render_report(&r.report.without_timings(), ReportFormat::Csv));
    let identical = match (rerun(), rerun()) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    };
    let full_csv = render_report(&run.report.without_timings(), ReportFormat::Csv);
    let md = render_report(&run.report, ReportFormat::Markdown);
    (
        outcome(
            converged && identical,
            format!(
                "mAP@50 hybrid {h:?}, plain {p:?} after {} epochs in {:.1} min; same-seed reports identical: {identical}; {} bytes of CSV",
                config.train.epochs,
                secs / 60.0,
                full_csv.len()
            ),
        ),
        Some(md),
    )
}

fn dyadic(rng: &mut Rng) -> Sample {
    let q = |rng: &mut Rng, lo: usize, hi: usize| rng.range_inclusive(lo, hi) as f64 / 1024.0;
    let labels = (0..rng.range_inclusive(0, 4))
        .map(|_| {
            let (w, h) = (q(rng, 64, 300), q(rng, 64, 300));
            GroundTruth { class_id: rng.range_inclusive(0, 1), bbox: BBox::new(q(rng, 200, 824), q(rng, 200, 824), w, h) }
        })
        .collect();
    Sample { image: Tensor::from_fn(&[3, 16, 16], |_| rng.next_f64()), labels, source: String::new() }
}

fn augmentation_suite() -> Outcome {
    let mut rng = Rng::new(6);
    let wild = AugmentPolicy {
        flip_p: 0.7,
        rotate_p: 0.7,
        zoom_p: 0.7,
        brightness_p: 0.7,
        contrast_p: 0.7,
        max_rotation_deg: 45.0,
        zoom_range: (0.5, 1.8),
        ..AugmentPolicy::default()
    };
    let (mut flips, mut ranges, mut identities) = (true, true, true);
    for _ in 0..500 {
        let s = dyadic(&mut rng);
        flips &= hflip(&hflip(&s)) == s;
        identities &= augment(&s, &AugmentPolicy::none(), &mut rng) == s;
        let out = augment(&s, &wild, &mut rng);
        ranges &= out.labels.iter().all(|g| {
            let [x0, y0, x1, y1] = g.bbox.corners();
            x0 >= -1e-12 && y0 >= -1e-12 && x1 <= 1.0 + 1e-12 && y1 <= 1.0 + 1e-12
        });
    }
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let b = BBox::new(rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95), rng.uniform(0.01, 0.9), rng.uniform(0.01, 0.9));
        let deg = rng.uniform(-180.0, 180.0);
        let (w, h) = (rng.range_inclusive(4, 200), rng.range_inclusive(4, 200));
        let got = rotated_hull(&b, deg, w, h).corners();
        let want = oracle_hull(&b, deg, w as f64, h as f64);
        worst = (0..4).map(|k| (got[k] - want[k]).abs()).fold(worst, f64::max);
    }
    outcome(
        flips && ranges && identities && worst <= 1e-9,
        format!("double flip {flips}, box range {ranges}, disabled policy identity {identities}, hull max |Δ| {worst:.1e}"),
    )
}

fn delta_recorded(md: Option<&str>) -> Outcome {
    match md.and_then(|m| m.lines().find(|l| l.starts_with("Observed mAP@50 delta"))) {
        Some(line) => {
            let signed = line.contains('+') || line.contains("−0") || line.contains("-0") || line.contains("tie");
            outcome(signed && md.is_some_and(|m| m.contains("reported, not asserted")), line.to_string())
        }
        None => outcome(false, "no delta line in the markdown report"),
    }
}

fn main() -> ExitCode {
    let mut all = true;
    let mut report = |n: usize, title: &str, o: Outcome| {
        println!("{} criterion {n}: {title}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        all &= o.passed;
    };
    report(1, "gradient suite", gradient_suite());
    report(2, "metrics oracle", metrics_oracle());
    report(3, "formula fixtures", formula_fixtures());
    report(4, "hybrid costs strictly more", cost_ordering());
    let (bench, md) = desk_experiment();
    report(5, "desk experiment", bench);
    report(6, "augmentation properties", augmentation_suite());
    report(7, "observed delta recorded", delta_recorded(md.as_deref()));
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
