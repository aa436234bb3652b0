//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`GradTape`] records every op executed through it, in execution order, so
//! the node list is already topologically sorted. [`GradTape::backward`] walks
//! it once in reverse and accumulates vector-Jacobian products.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::ops::{self, BatchNormSaved, RunningStats};
use crate::tensor::Tensor;

/// Handle to a node on a particular tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Identifies a trainable parameter across tapes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    },
    BatchNormTrain {
        input: Var,
        gamma: Var,
        beta: Var,
        saved: BatchNormSaved,
    },
    BatchNormInfer {
        input: Var,
        gamma: Var,
        running: RunningStats,
        beta: Var,
    },
    LeakyRelu {
        input: Var,
        slope: f64,
    },
    Sigmoid(Var),
    Softplus(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Tensor),
    AddConst(Var),
    Scale(Var, f64),
    Square(Var),
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct GradTape {
    nodes: Vec<Node>,
}

impl GradTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable input that is not a registered parameter.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId, value: Tensor) -> Var {
        self.push(value, Op::Param(id))
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let out = ops::conv2d(
            self.value(input),
            self.value(kernel),
            bias.map(|b| self.value(b).data()),
            stride,
            padding,
        )?;
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                padding,
            },
        ))
    }

    /// Train-mode batchnorm; `running` absorbs the batch statistics.
    pub fn batchnorm_train(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        running: &mut RunningStats,
    ) -> Result<Var> {
        let (out, saved) = ops::batchnorm_train(
            self.value(input),
            self.value(gamma).data(),
            self.value(beta).data(),
            running,
        )?;
        Ok(self.push(
            out,
            Op::BatchNormTrain {
                input,
                gamma,
                beta,
                saved,
            },
        ))
    }

    pub fn batchnorm_infer(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        running: &RunningStats,
    ) -> Result<Var> {
        let out = ops::batchnorm_infer(
            self.value(input),
            self.value(gamma).data(),
            self.value(beta).data(),
            running,
        )?;
        Ok(self.push(
            out,
            Op::BatchNormInfer {
                input,
                gamma,
                beta,
                running: running.clone(),
            },
        ))
    }

    pub fn leaky_relu(&mut self, input: Var, slope: f64) -> Var {
        let out = ops::leaky_relu(self.value(input), slope);
        self.push(out, Op::LeakyRelu { input, slope })
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let out = ops::sigmoid(self.value(input));
        self.push(out, Op::Sigmoid(input))
    }

    /// Elementwise `ln(1 + e^x)`.
    pub fn softplus(&mut self, input: Var) -> Var {
        let out = self.value(input).map(ops::softplus_scalar);
        self.push(out, Op::Softplus(input))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// Elementwise product with a constant (non-differentiable) tensor.
    pub fn mul_const(&mut self, a: Var, factor: &Tensor) -> Result<Var> {
        let out = self.value(a).zip_map(factor, |x, y| x * y)?;
        Ok(self.push(out, Op::MulConst(a, factor.clone())))
    }

    pub fn add_const(&mut self, a: Var, offset: &Tensor) -> Result<Var> {
        let out = self.value(a).zip_map(offset, |x, y| x + y)?;
        Ok(self.push(out, Op::AddConst(a)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).map(|x| x * factor);
        self.push(out, Op::Scale(a, factor))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * x);
        self.push(out, Op::Square(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a))
    }

    /// Reverse sweep from a scalar `loss` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let node = self
            .nodes
            .get(loss.0)
            .ok_or_else(|| Error::Autodiff(format!("node {} is not on this tape", loss.0)))?;
        if !node.value.is_scalar() {
            return Err(Error::Autodiff(format!(
                "loss must be scalar, got shape {:?}",
                node.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(node.value.shape()));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf | Op::Param(_) => {
                    grads[idx] = Some(g);
                }
                Op::Conv2d {
                    input,
                    kernel,
                    bias,
                    stride,
                    padding,
                } => {
                    let cg = ops::conv2d_backward(
                        self.value(*input),
                        self.value(*kernel),
                        *stride,
                        *padding,
                        &g,
                    )?;
                    accumulate(&mut grads, *input, cg.input);
                    accumulate(&mut grads, *kernel, cg.kernel);
                    if let Some(b) = bias {
                        let shape = self.value(*b).shape().to_vec();
                        accumulate(&mut grads, *b, Tensor::new(&shape, cg.bias)?);
                    }
                }
                Op::BatchNormTrain {
                    input,
                    gamma,
                    beta,
                    saved,
                } => {
                    let gamma_v = self.value(*gamma);
                    let bg = ops::batchnorm_train_backward(&g, saved, gamma_v.data())?;
                    self.push_bn_grads(&mut grads, *input, *gamma, *beta, bg)?;
                }
                Op::BatchNormInfer {
                    input,
                    gamma,
                    beta,
                    running,
                } => {
                    let bg = ops::batchnorm_infer_backward(
                        &g,
                        self.value(*input),
                        self.value(*gamma).data(),
                        running,
                    )?;
                    self.push_bn_grads(&mut grads, *input, *gamma, *beta, bg)?;
                }
                Op::LeakyRelu { input, slope } => {
                    let d = ops::leaky_relu_backward(self.value(*input), *slope, &g)?;
                    accumulate(&mut grads, *input, d);
                }
                Op::Sigmoid(a) => {
                    let d = ops::sigmoid_backward(&node.value, &g)?;
                    accumulate(&mut grads, *a, d);
                }
                Op::Softplus(a) => {
                    let d = self
                        .value(*a)
                        .zip_map(&g, |x, gy| gy * ops::sigmoid_scalar(x))?;
                    accumulate(&mut grads, *a, d);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.map(|x| -x));
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let da = g.zip_map(self.value(*b), |x, y| x * y)?;
                    let db = g.zip_map(self.value(*a), |x, y| x * y)?;
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::MulConst(a, factor) => {
                    accumulate(&mut grads, *a, g.zip_map(factor, |x, y| x * y)?);
                }
                Op::AddConst(a) => accumulate(&mut grads, *a, g),
                Op::Scale(a, c) => accumulate(&mut grads, *a, g.map(|x| x * c)),
                Op::Square(a) => {
                    let d = g.zip_map(self.value(*a), |x, y| 2.0 * x * y)?;
                    accumulate(&mut grads, *a, d);
                }
                Op::Sum(a) => {
                    let shape = self.value(*a).shape().to_vec();
                    accumulate(&mut grads, *a, Tensor::full(&shape, g.item()));
                }
            }
        }

        let mut params = BTreeMap::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Op::Param(id) = node.op {
                let g = grads
                    .get_mut(idx)
                    .and_then(Option::take)
                    .unwrap_or_else(|| Tensor::zeros(node.value.shape()));
                match params.get_mut(&id) {
                    None => {
                        params.insert(id, g);
                    }
                    Some(acc) => Tensor::add_assign(acc, &g),
                }
            }
        }
        Ok(Gradients { nodes: grads, params })
    }

    fn push_bn_grads(
        &self,
        grads: &mut [Option<Tensor>],
        input: Var,
        gamma: Var,
        beta: Var,
        bg: ops::BatchNormGrads,
    ) -> Result<()> {
        accumulate(grads, input, bg.input);
        let gs = self.value(gamma).shape().to_vec();
        accumulate(grads, gamma, Tensor::new(&gs, bg.gamma)?);
        let bs = self.value(beta).shape().to_vec();
        accumulate(grads, beta, Tensor::new(&bs, bg.beta)?);
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Result of a backward sweep.
#[derive(Debug)]
pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
    params: BTreeMap<ParamId, Tensor>,
}

impl Gradients {
    /// Gradient of a leaf; `None` if the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.nodes.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of every parameter registered on the tape, zero where the
    /// loss does not depend on it.
    pub fn params(&self) -> &BTreeMap<ParamId, Tensor> {
        &self.params
    }

    pub fn into_params(self) -> BTreeMap<ParamId, Tensor> {
        self.params
    }
}
