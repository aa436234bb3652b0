use crate::autodiff::{GradTape, ParamId, Var};
use crate::data::rng::Rng;
use crate::error::{Error, Result};
use crate::ops::{Mode, RunningStats};
use crate::tensor::Tensor;

use super::config::{
    trace_spatial, DetectorConfig, IMAGE_CHANNELS, HybridBlockConfig, STEM_KERNEL, STEM_PADDING,
};
use super::flops;

/// A named trainable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
}

/// Named batchnorm running statistics (not trainable).
#[derive(Clone, Debug, PartialEq)]
pub struct BnBuffer {
    pub name: String,
    pub stats: RunningStats,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Layer {
    /// Bias-free conv followed by batchnorm and leaky ReLU.
    ConvBnAct {
        kernel: usize,
        gamma: usize,
        beta: usize,
        bn: usize,
        stride: usize,
        padding: usize,
        slope: f64,
    },
    /// 1×1 conv with bias producing the raw prediction map.
    Head { kernel: usize, bias: usize },
}

#[derive(Clone, Debug)]
pub struct Model {
    detector: DetectorConfig,
    hybrid: Option<HybridBlockConfig>,
    params: Vec<Param>,
    buffers: Vec<BnBuffer>,
    layers: Vec<Layer>,
}

/// Tape handles produced by one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub output: Var,
    /// One tape variable per model parameter, indexed like [`Model::params`].
    pub params: Vec<Var>,
    /// Inputs of every activation, in layer order.
    pub preactivations: Vec<Var>,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// He-normal kernel with a stream derived from the seed and parameter name.
fn he_kernel(seed: u64, name: &str, shape: [usize; 4]) -> Tensor {
    let mut rng = Rng::derive(seed, fnv1a(name.as_bytes()));
    let fan_in = (shape[1] * shape[2] * shape[3]) as f64;
    let std = (2.0 / fan_in).sqrt();
    Tensor::from_fn(&shape, |_| rng.normal() * std)
}

struct Builder {
    seed: u64,
    params: Vec<Param>,
    buffers: Vec<BnBuffer>,
    layers: Vec<Layer>,
}

impl Builder {
    fn param(&mut self, name: String, tensor: Tensor) -> usize {
        self.params.push(Param { name, tensor });
        self.params.len() - 1
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_bn_act(&mut self, prefix: &str, c_in: usize, c_out: usize, k: usize, stride: usize, padding: usize, slope: f64) {
        let kname = format!("{prefix}.kernel");
        let kernel = he_kernel(self.seed, &kname, [c_out, c_in, k, k]);
        let kernel = self.param(kname, kernel);
        let gamma = self.param(format!("{prefix}.bn.gamma"), Tensor::ones(&[c_out]));
        let beta = self.param(format!("{prefix}.bn.beta"), Tensor::zeros(&[c_out]));
        self.buffers.push(BnBuffer {
            name: format!("{prefix}.bn"),
            stats: RunningStats::new(c_out),
        });
        self.layers.push(Layer::ConvBnAct {
            kernel,
            gamma,
            beta,
            bn: self.buffers.len() - 1,
            stride,
            padding,
            slope,
        });
    }
}

impl Model {
    pub const INPUT_CHANNELS: usize = IMAGE_CHANNELS;

    /// Builds and deterministically initializes a model.
    pub fn build(
        detector: DetectorConfig,
        hybrid: Option<HybridBlockConfig>,
        seed: u64,
    ) -> Result<Self> {
        detector.validate()?;
        match (&hybrid, detector.with_hybrid) {
            (Some(h), true) => h.validate()?,
            (None, false) => {}
            (Some(_), false) => {
                return Err(Error::Config(
                    "hybrid config given but with_hybrid is false".into(),
                ))
            }
            (None, true) => {
                return Err(Error::Config(
                    "with_hybrid is true but no hybrid config given".into(),
                ))
            }
        }
        trace_spatial(&detector, hybrid.as_ref())?;

        let mut b = Builder {
            seed,
            params: Vec::new(),
            buffers: Vec::new(),
            layers: Vec::new(),
        };
        let mut channels = Self::INPUT_CHANNELS;
        if let Some(h) = &hybrid {
            for (i, l) in h.layers.iter().enumerate() {
                b.conv_bn_act(&format!("hybrid.{i}"), channels, l.out_channels, l.kernel_size, 1, l.padding, h.slope);
                channels = l.out_channels;
            }
        }
        for (i, l) in detector.stem.iter().enumerate() {
            b.conv_bn_act(&format!("stem.{i}"), channels, l.out_channels, STEM_KERNEL, l.stride, STEM_PADDING, detector.slope);
            channels = l.out_channels;
        }
        let out = detector.head_channels();
        let kernel = he_kernel(seed, "head.kernel", [out, channels, 1, 1]);
        let kernel = b.param("head.kernel".into(), kernel);
        let bias = b.param("head.bias".into(), Tensor::zeros(&[out]));
        b.layers.push(Layer::Head { kernel, bias });

        Ok(Self {
            detector,
            hybrid,
            params: b.params,
            buffers: b.buffers,
            layers: b.layers,
        })
    }

    /// Rebuilds a model from stored tensors; names and shapes must match the config.
    pub fn from_parts(
        detector: DetectorConfig,
        hybrid: Option<HybridBlockConfig>,
        params: Vec<Param>,
        buffers: Vec<BnBuffer>,
    ) -> Result<Self> {
        let mut model = Self::build(detector, hybrid, 0)?;
        if params.len() != model.params.len() || buffers.len() != model.buffers.len() {
            return Err(Error::Format(format!(
                "expected {} parameters and {} batchnorm buffers, got {} and {}",
                model.params.len(),
                model.buffers.len(),
                params.len(),
                buffers.len()
            )));
        }
        for (want, got) in model.params.iter().zip(&params) {
            if want.name != got.name || want.tensor.shape() != got.tensor.shape() {
                return Err(Error::Format(format!(
                    "parameter mismatch: expected {} {:?}, got {} {:?}",
                    want.name,
                    want.tensor.shape(),
                    got.name,
                    got.tensor.shape()
                )));
            }
        }
        for (want, got) in model.buffers.iter().zip(&buffers) {
            if want.name != got.name || want.stats.mean.len() != got.stats.mean.len() {
                return Err(Error::Format(format!(
                    "batchnorm buffer mismatch at {}",
                    want.name
                )));
            }
        }
        model.params = params;
        model.buffers = buffers;
        Ok(model)
    }

    pub fn detector_config(&self) -> &DetectorConfig {
        &self.detector
    }

    pub fn hybrid_config(&self) -> Option<&HybridBlockConfig> {
        self.hybrid.as_ref()
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn buffers(&self) -> &[BnBuffer] {
        &self.buffers
    }

    pub(crate) fn restore_buffers(&mut self, buffers: Vec<BnBuffer>) {
        self.buffers = buffers;
    }

    pub(crate) fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.tensor)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    pub fn flops(&self) -> u64 {
        flops::count_flops(self)
    }

    /// Every parameter and buffer value as little-endian bytes, in order.
    pub fn state_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for p in &self.params {
            out.extend(p.tensor.to_le_bytes());
        }
        for b in &self.buffers {
            for v in b.stats.mean.iter().chain(&b.stats.var) {
                out.extend(v.to_le_bytes());
            }
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.tensor.all_finite())
            && self
                .buffers
                .iter()
                .all(|b| b.stats.mean.iter().chain(&b.stats.var).all(|v| v.is_finite()))
    }

    fn check_input(&self, batch: &Tensor) -> Result<()> {
        let (_, c, h, w) = batch.nchw()?;
        let s = self.detector.input_size;
        if c != Self::INPUT_CHANNELS || h != s || w != s {
            return Err(Error::Shape {
                what: "model input",
                left: batch.shape().to_vec(),
                right: vec![0, Self::INPUT_CHANNELS, s, s],
            });
        }
        Ok(())
    }

    /// Records a forward pass on `tape`. Train mode updates batchnorm running stats.
    pub fn forward_on_tape(
        &mut self,
        tape: &mut GradTape,
        input: Var,
        mode: Mode,
    ) -> Result<ForwardTrace> {
        self.check_input(tape.value(input))?;
        let params = self.register(tape);
        let mut preactivations = Vec::new();
        let mut x = input;
        for layer in &self.layers {
            x = match *layer {
                Layer::ConvBnAct {
                    kernel,
                    gamma,
                    beta,
                    bn,
                    stride,
                    padding,
                    slope,
                } => {
                    let y = tape.conv2d(x, params[kernel], None, stride, padding)?;
                    let stats = &mut self.buffers[bn].stats;
                    let y = match mode {
                        Mode::Train => tape.batchnorm_train(y, params[gamma], params[beta], stats)?,
                        Mode::Infer => tape.batchnorm_infer(y, params[gamma], params[beta], stats)?,
                    };
                    preactivations.push(y);
                    tape.leaky_relu(y, slope)
                }
                Layer::Head { kernel, bias } => {
                    tape.conv2d(x, params[kernel], Some(params[bias]), 1, 0)?
                }
            };
        }
        Ok(ForwardTrace {
            output: x,
            params,
            preactivations,
        })
    }

    fn register(&self, tape: &mut GradTape) -> Vec<Var> {
        self.params
            .iter()
            .enumerate()
            .map(|(i, p)| tape.param(ParamId(i), p.tensor.clone()))
            .collect()
    }

    /// Raw prediction map `N×(B·5+K)×S×S`.
    pub fn forward(&mut self, batch: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut tape = GradTape::new();
        let input = tape.leaf(batch.clone());
        let trace = self.forward_on_tape(&mut tape, input, mode)?;
        Ok(tape.value(trace.output).clone())
    }

    /// Infer-mode forward that leaves the model untouched.
    pub fn predict(&self, batch: &Tensor) -> Result<Tensor> {
        self.check_input(batch)?;
        let mut x = batch.clone();
        for layer in &self.layers {
            x = match *layer {
                Layer::ConvBnAct {
                    kernel,
                    gamma,
                    beta,
                    bn,
                    stride,
                    padding,
                    slope,
                } => {
                    let y = crate::ops::conv2d(&x, &self.params[kernel].tensor, None, stride, padding)?;
                    let y = crate::ops::batchnorm_infer(
                        &y,
                        self.params[gamma].tensor.data(),
                        self.params[beta].tensor.data(),
                        &self.buffers[bn].stats,
                    )?;
                    crate::ops::leaky_relu(&y, slope)
                }
                Layer::Head { kernel, bias } => crate::ops::conv2d(
                    &x,
                    &self.params[kernel].tensor,
                    Some(self.params[bias].tensor.data()),
                    1,
                    0,
                )?,
            };
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk(hybrid: bool) -> Model {
        let h = hybrid.then(HybridBlockConfig::default);
        Model::build(DetectorConfig::desk(1, hybrid), h, 42).unwrap()
    }

    #[test]
    fn build_is_deterministic() {
        assert_eq!(desk(true).state_bytes(), desk(true).state_bytes());
        let other = Model::build(DetectorConfig::desk(1, true), Some(HybridBlockConfig::default()), 43).unwrap();
        assert_ne!(desk(true).state_bytes(), other.state_bytes());
    }

    #[test]
    fn hybrid_flag_must_match_config() {
        assert!(Model::build(DetectorConfig::desk(1, true), None, 0).is_err());
        assert!(Model::build(DetectorConfig::desk(1, false), Some(HybridBlockConfig::default()), 0).is_err());
    }

    #[test]
    fn zero_batch_gives_finite_output_of_right_shape() {
        let mut m = desk(true);
        let out = m.forward(&Tensor::zeros(&[2, 3, 64, 64]), Mode::Train).unwrap();
        assert_eq!(out.shape(), &[2, 6, 4, 4]);
        assert!(out.all_finite());
        assert!(m.forward(&Tensor::zeros(&[1, 3, 32, 32]), Mode::Infer).is_err());
    }

    #[test]
    fn predict_matches_infer_forward() {
        let mut m = desk(true);
        let mut rng = Rng::new(5);
        let x = Tensor::from_fn(&[2, 3, 64, 64], |_| rng.next_f64());
        m.forward(&x, Mode::Train).unwrap();
        let a = m.predict(&x).unwrap();
        let b = m.forward(&x, Mode::Infer).unwrap();
        assert_eq!(a, b);
        assert_eq!(m.predict(&x).unwrap(), a);
    }
}
