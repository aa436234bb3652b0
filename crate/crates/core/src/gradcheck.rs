//! Central finite-difference checks of every tape operation and of the
//! composed detection loss.

use serde::{Deserialize, Serialize};

use crate::autodiff::{GradTape, ParamId, Var};
use crate::boxes::{BBox, GroundTruth};
use crate::data::Rng;
use crate::detector::{
    detection_loss_on_tape, DetectorConfig, HybridBlockConfig, HybridLayer, LossWeights, Model,
    StemLayer,
};
use crate::error::{Error, Result};
use crate::ops::{Mode, RunningStats};
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;
const REL_FLOOR: f64 = 1e-8;
/// Trials whose activation inputs come this close to the kink are redrawn.
const KINK_MARGIN: f64 = 1e-3;

/// `|a − b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Largest coordinate-wise relative error between two gradient lists.
pub fn max_relative_error(analytic: &[Tensor], numeric: &[Tensor]) -> Result<f64> {
    if analytic.len() != numeric.len() {
        return Err(Error::InvalidArgument(format!(
            "{} analytic vs {} numeric gradients",
            analytic.len(),
            numeric.len()
        )));
    }
    let mut worst = 0.0f64;
    for (a, n) in analytic.iter().zip(numeric) {
        a.expect_same_shape(n, "analytic vs numeric gradient")?;
        for (&x, &y) in a.data().iter().zip(n.data()) {
            worst = worst.max(relative_error(x, y));
        }
    }
    Ok(worst)
}

/// Reverse-mode gradients of the scalar built by `build` w.r.t. every input.
pub fn analytic_gradients<F>(inputs: &[Tensor], build: F) -> Result<Vec<Tensor>>
where
    F: Fn(&mut GradTape, &[Var]) -> Result<Var>,
{
    let mut tape = GradTape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    Ok(vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.wrt(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect())
}

fn evaluate<F>(inputs: &[Tensor], build: &F) -> Result<f64>
where
    F: Fn(&mut GradTape, &[Var]) -> Result<Var>,
{
    let mut tape = GradTape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    let v = tape.value(loss);
    if !v.is_scalar() {
        return Err(Error::Autodiff("finite differences need a scalar output".into()));
    }
    Ok(v.item())
}

/// Central differences `(f(x+h) − f(x−h)) / 2h`, one coordinate at a time.
pub fn numeric_gradients<F>(inputs: &[Tensor], build: F, step: f64) -> Result<Vec<Tensor>>
where
    F: Fn(&mut GradTape, &[Var]) -> Result<Var>,
{
    let mut work = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut g = Tensor::zeros(inputs[i].shape());
        for k in 0..inputs[i].len() {
            let x = inputs[i].data()[k];
            work[i].data_mut()[k] = x + step;
            let up = evaluate(&work, &build)?;
            work[i].data_mut()[k] = x - step;
            let down = evaluate(&work, &build)?;
            work[i].data_mut()[k] = x;
            g.data_mut()[k] = (up - down) / (2.0 * step);
        }
        out.push(g);
    }
    Ok(out)
}

/// Max relative error between tape and finite-difference gradients.
pub fn check_gradients<F>(inputs: &[Tensor], build: F, step: f64) -> Result<f64>
where
    F: Fn(&mut GradTape, &[Var]) -> Result<Var>,
{
    let analytic = analytic_gradients(inputs, &build)?;
    let numeric = numeric_gradients(inputs, &build, step)?;
    max_relative_error(&analytic, &numeric)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub trials: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradCheckConfig {
    pub trials: usize,
    pub step: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            trials: 100,
            step: FD_STEP,
            tolerance: FD_TOLERANCE,
            seed: 2024,
        }
    }
}

fn normal_tensor(rng: &mut Rng, shape: &[usize], scale: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.normal() * scale)
}

/// Values bounded away from zero so activation kinks are never straddled.
fn off_kink_tensor(rng: &mut Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = rng.uniform(0.05, 2.0);
        if rng.bernoulli(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Scalarizes `out` as `Σ w ⊙ out` with fixed random weights.
fn project(tape: &mut GradTape, out: Var, weights: &Tensor) -> Result<Var> {
    let p = tape.mul_const(out, weights)?;
    Ok(tape.sum(p))
}

fn near_kink(t: &Tensor) -> bool {
    t.data().iter().any(|v| v.abs() < KINK_MARGIN)
}

struct Trial {
    inputs: Vec<Tensor>,
    build: Box<dyn Fn(&mut GradTape, &[Var]) -> Result<Var>>,
}

fn conv_trial(rng: &mut Rng) -> Result<Trial> {
    let n = rng.range_inclusive(1, 2);
    let c_in = rng.range_inclusive(1, 3);
    let c_out = rng.range_inclusive(1, 3);
    let k = rng.range_inclusive(1, 3);
    let stride = rng.range_inclusive(1, 2);
    let padding = rng.range_inclusive(0, 1);
    let h = rng.range_inclusive(k, 5);
    let w = rng.range_inclusive(k, 5);
    let x = normal_tensor(rng, &[n, c_in, h, w], 1.0);
    let kern = normal_tensor(rng, &[c_out, c_in, k, k], 0.5);
    let bias = normal_tensor(rng, &[c_out], 0.5);
    let ho = crate::ops::conv_out_dim(h, k, stride, padding).expect("fits");
    let wo = crate::ops::conv_out_dim(w, k, stride, padding).expect("fits");
    let weights = normal_tensor(rng, &[n, c_out, ho, wo], 1.0);
    Ok(Trial {
        inputs: vec![x, kern, bias],
        build: Box::new(move |t, v| {
            let y = t.conv2d(v[0], v[1], Some(v[2]), stride, padding)?;
            project(t, y, &weights)
        }),
    })
}

/// At least four values per channel: with two, the normalized output is ±1
/// up to eps and the input gradient shrinks to FD roundoff size.
fn bn_shape(rng: &mut Rng) -> [usize; 4] {
    loop {
        let s = [
            rng.range_inclusive(2, 3),
            rng.range_inclusive(1, 3),
            rng.range_inclusive(1, 3),
            rng.range_inclusive(1, 3),
        ];
        if s[0] * s[2] * s[3] >= 4 {
            return s;
        }
    }
}

fn bn_train_trial(rng: &mut Rng) -> Result<Trial> {
    let shape = bn_shape(rng);
    let c = shape[1];
    let x = normal_tensor(rng, &shape, 1.0);
    let gamma = Tensor::from_fn(&[c], |_| rng.uniform(0.5, 1.5));
    let beta = normal_tensor(rng, &[c], 0.5);
    let weights = normal_tensor(rng, &shape, 1.0);
    Ok(Trial {
        inputs: vec![x, gamma, beta],
        build: Box::new(move |t, v| {
            let mut stats = RunningStats::new(c);
            let y = t.batchnorm_train(v[0], v[1], v[2], &mut stats)?;
            project(t, y, &weights)
        }),
    })
}

fn bn_infer_trial(rng: &mut Rng) -> Result<Trial> {
    let shape = bn_shape(rng);
    let c = shape[1];
    let x = normal_tensor(rng, &shape, 1.0);
    let gamma = Tensor::from_fn(&[c], |_| rng.uniform(0.5, 1.5));
    let beta = normal_tensor(rng, &[c], 0.5);
    let mut stats = RunningStats::new(c);
    stats.mean = (0..c).map(|_| rng.normal() * 0.3).collect();
    stats.var = (0..c).map(|_| rng.uniform(0.2, 2.0)).collect();
    let weights = normal_tensor(rng, &shape, 1.0);
    Ok(Trial {
        inputs: vec![x, gamma, beta],
        build: Box::new(move |t, v| {
            let y = t.batchnorm_infer(v[0], v[1], v[2], &stats)?;
            project(t, y, &weights)
        }),
    })
}

fn small_shape(rng: &mut Rng) -> Vec<usize> {
    vec![rng.range_inclusive(1, 3), rng.range_inclusive(1, 4)]
}

fn unary_trial(rng: &mut Rng, which: &'static str) -> Result<Trial> {
    let shape = small_shape(rng);
    let x = match which {
        "leaky_relu" => off_kink_tensor(rng, &shape),
        _ => normal_tensor(rng, &shape, 3.0),
    };
    let weights = normal_tensor(rng, &shape, 1.0);
    Ok(Trial {
        inputs: vec![x],
        build: Box::new(move |t, v| {
            let y = match which {
                "leaky_relu" => t.leaky_relu(v[0], crate::ops::DEFAULT_LEAKY_SLOPE),
                "sigmoid" => t.sigmoid(v[0]),
                _ => t.softplus(v[0]),
            };
            project(t, y, &weights)
        }),
    })
}

/// add, sub, mul, mul_const, add_const, scale, square and sum in one graph.
fn elementwise_trial(rng: &mut Rng) -> Result<Trial> {
    let shape = small_shape(rng);
    let a = normal_tensor(rng, &shape, 1.0);
    let b = normal_tensor(rng, &shape, 1.0);
    let factor = normal_tensor(rng, &shape, 1.0);
    let offset = normal_tensor(rng, &shape, 1.0);
    let s = rng.uniform(-2.0, 2.0);
    let weights = normal_tensor(rng, &shape, 1.0);
    Ok(Trial {
        inputs: vec![a, b],
        build: Box::new(move |t, v| {
            let sum = t.add(v[0], v[1])?;
            let diff = t.sub(v[0], v[1])?;
            let prod = t.mul(sum, diff)?;
            let prod = t.mul_const(prod, &factor)?;
            let sq = t.square(v[1]);
            let sq = t.add_const(sq, &offset)?;
            let sq = t.scale(sq, s);
            let all = t.add(prod, sq)?;
            project(t, all, &weights)
        }),
    })
}

fn composite_trial(rng: &mut Rng) -> Result<Option<Trial>> {
    let n = 2;
    let (c_in, c_out) = (rng.range_inclusive(1, 2), rng.range_inclusive(1, 3));
    let (h, w) = (rng.range_inclusive(2, 4), rng.range_inclusive(2, 4));
    let x = normal_tensor(rng, &[n, c_in, h, w], 1.0);
    let kern = normal_tensor(rng, &[c_out, c_in, 3, 3], 0.5);
    let gamma = Tensor::from_fn(&[c_out], |_| rng.uniform(0.5, 1.5));
    let beta = normal_tensor(rng, &[c_out], 0.5);
    let weights = normal_tensor(rng, &[n, c_out, h, w], 1.0);
    let inputs = vec![x, kern, gamma, beta];
    // reject draws whose activation input sits near the kink
    let mut tape = GradTape::new();
    let v: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let y = tape.conv2d(v[0], v[1], None, 1, 1)?;
    let y = tape.batchnorm_train(y, v[2], v[3], &mut RunningStats::new(c_out))?;
    if near_kink(tape.value(y)) {
        return Ok(None);
    }
    Ok(Some(Trial {
        inputs,
        build: Box::new(move |t, v| {
            let y = t.conv2d(v[0], v[1], None, 1, 1)?;
            let y = t.batchnorm_train(y, v[2], v[3], &mut RunningStats::new(c_out))?;
            let y = t.leaky_relu(y, crate::ops::DEFAULT_LEAKY_SLOPE);
            project(t, y, &weights)
        }),
    }))
}

fn random_targets(rng: &mut Rng, n: usize, classes: usize) -> Vec<Vec<GroundTruth>> {
    (0..n)
        .map(|_| {
            (0..rng.range_inclusive(0, 3))
                .map(|_| GroundTruth {
                    class_id: rng.range_inclusive(0, classes - 1),
                    bbox: BBox::new(
                        rng.uniform(0.05, 0.95),
                        rng.uniform(0.05, 0.95),
                        rng.uniform(0.05, 0.5),
                        rng.uniform(0.05, 0.5),
                    ),
                })
                .collect()
        })
        .collect()
}

fn loss_raw_trial(rng: &mut Rng) -> Result<Trial> {
    let n = rng.range_inclusive(1, 2);
    let s = rng.range_inclusive(1, 3);
    let boxes = rng.range_inclusive(1, 2);
    let classes = rng.range_inclusive(1, 3);
    let raw = normal_tensor(rng, &[n, boxes * 5 + classes, s, s], 1.5);
    let targets = random_targets(rng, n, classes);
    Ok(Trial {
        inputs: vec![raw],
        build: Box::new(move |t, v| {
            detection_loss_on_tape(t, v[0], &targets, boxes, LossWeights::default())
        }),
    })
}

fn tiny_detector(rng: &mut Rng, with_hybrid: bool) -> Result<Model> {
    let det = DetectorConfig {
        grid_size: 2,
        boxes_per_cell: 1,
        num_classes: 2,
        input_size: 8,
        with_hybrid,
        stem: vec![
            StemLayer { out_channels: 3, stride: 2 },
            StemLayer { out_channels: 3, stride: 2 },
        ],
        slope: crate::ops::DEFAULT_LEAKY_SLOPE,
    };
    let hybrid = HybridBlockConfig {
        layers: vec![HybridLayer::same(2, 3), HybridLayer::same(3, 1), HybridLayer::same(3, 3)],
        ..HybridBlockConfig::default()
    };
    Model::build(det, with_hybrid.then_some(hybrid), rng.next_u64())
}

/// Loss w.r.t. every parameter of a tiny model (hybrid block, stem, head).
fn model_trial(rng: &mut Rng) -> Result<Option<Trial>> {
    let with_hybrid = rng.bernoulli(0.5);
    let model = tiny_detector(rng, with_hybrid)?;
    let n = 2;
    let batch = Tensor::from_fn(&[n, 3, 8, 8], |_| rng.next_f64());
    let targets = random_targets(rng, n, 2);
    {
        let mut m = model.clone();
        let mut tape = GradTape::new();
        let x = tape.leaf(batch.clone());
        let trace = m.forward_on_tape(&mut tape, x, Mode::Train)?;
        if trace.preactivations.iter().any(|&p| near_kink(tape.value(p))) {
            return Ok(None);
        }
    }
    let inputs: Vec<Tensor> = model.params().iter().map(|p| p.tensor.clone()).collect();
    Ok(Some(Trial {
        inputs,
        build: Box::new(move |t, v| {
            let mut m = model.clone();
            for (p, &var) in m.params_mut().iter_mut().zip(v) {
                p.tensor = t.value(var).clone();
            }
            let x = t.leaf(batch.clone());
            let trace = m.forward_on_tape(t, x, Mode::Train)?;
            detection_loss_on_tape(t, trace.output, &targets, 1, LossWeights::default())
        }),
    }))
}

fn model_param_check(trial: &Trial, step: f64) -> Result<f64> {
    // the model registers its own `Param` nodes; the leaves only carry values
    let analytic = {
        let mut tape = GradTape::new();
        let vars: Vec<Var> = trial.inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = (trial.build)(&mut tape, &vars)?;
        let grads = tape.backward(loss)?;
        (0..trial.inputs.len())
            .map(|i| grads.params().get(&ParamId(i)).cloned().expect("registered"))
            .collect::<Vec<_>>()
    };
    let numeric = numeric_gradients(&trial.inputs, &trial.build, step)?;
    max_relative_error(&analytic, &numeric)
}

type Maker = fn(&mut Rng) -> Result<Option<Trial>>;

fn always(f: fn(&mut Rng) -> Result<Trial>) -> impl Fn(&mut Rng) -> Result<Option<Trial>> {
    move |r| f(r).map(Some)
}

fn run_check(
    name: &str,
    config: &GradCheckConfig,
    rng: &mut Rng,
    make: &dyn Fn(&mut Rng) -> Result<Option<Trial>>,
    params: bool,
) -> Result<CheckReport> {
    let mut worst = 0.0f64;
    let mut done = 0;
    let mut attempts = 0;
    while done < config.trials {
        attempts += 1;
        if attempts > config.trials * 50 {
            return Err(Error::InvalidArgument(format!(
                "{name}: could not draw kink-free trials"
            )));
        }
        let Some(trial) = make(rng)? else { continue };
        let err = if params {
            model_param_check(&trial, config.step)?
        } else {
            check_gradients(&trial.inputs, &trial.build, config.step)?
        };
        worst = worst.max(err);
        done += 1;
    }
    Ok(CheckReport {
        name: name.to_string(),
        trials: done,
        max_rel_error: worst,
        passed: worst <= config.tolerance,
    })
}

/// Every differentiable operation, a conv→batchnorm→activation composite, the
/// detection loss w.r.t. the raw map and w.r.t. a tiny model's parameters.
pub fn run_suite(config: &GradCheckConfig) -> Result<Vec<CheckReport>> {
    let unary = |which: &'static str| move |r: &mut Rng| unary_trial(r, which).map(Some);
    let checks: Vec<(&str, Box<dyn Fn(&mut Rng) -> Result<Option<Trial>>>, bool)> = vec![
        ("conv2d", Box::new(always(conv_trial)), false),
        ("batchnorm_train", Box::new(always(bn_train_trial)), false),
        ("batchnorm_infer", Box::new(always(bn_infer_trial)), false),
        ("leaky_relu", Box::new(unary("leaky_relu")), false),
        ("sigmoid", Box::new(unary("sigmoid")), false),
        ("softplus", Box::new(unary("softplus")), false),
        ("elementwise", Box::new(always(elementwise_trial)), false),
        ("conv_bn_leaky", Box::new(composite_trial as Maker), false),
        ("detection_loss_raw", Box::new(always(loss_raw_trial)), false),
        ("detection_loss_params", Box::new(model_trial as Maker), true),
    ];
    checks
        .iter()
        .enumerate()
        .map(|(i, (name, make, params))| {
            let mut rng = Rng::derive(config.seed, i as u64);
            run_check(name, config, &mut rng, make.as_ref(), *params)
        })
        .collect()
}
