//! Forward and backward kernels for the layer primitives.
//!
//! These are pure functions over [`Tensor`]s. The tape in [`crate::autodiff`]
//! records calls to them and wires the backward kernels together.

use crate::error::{invalid, Error, Result};
use crate::tensor::Tensor;

/// Output spatial size of a convolution along one axis.
pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    if stride == 0 || input + 2 * padding < kernel {
        return None;
    }
    Some((input + 2 * padding - kernel) / stride + 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeometry {
    pub fn new(input: &Tensor, kernel: &Tensor, stride: usize, padding: usize) -> Result<Self> {
        if stride == 0 {
            return Err(invalid("conv2d stride must be positive"));
        }
        let (n, c_in, h, w) = input.nchw()?;
        let (c_out, k_in, kh, kw) = kernel.nchw()?;
        if k_in != c_in {
            return Err(Error::Shape {
                what: "conv2d input channels vs kernel",
                left: input.shape().to_vec(),
                right: kernel.shape().to_vec(),
            });
        }
        let (Some(h_out), Some(w_out)) = (
            conv_out_dim(h, kh, stride, padding),
            conv_out_dim(w, kw, stride, padding),
        ) else {
            return Err(Error::Shape {
                what: "conv2d kernel larger than padded input",
                left: input.shape().to_vec(),
                right: kernel.shape().to_vec(),
            });
        };
        Ok(Self {
            n,
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            stride,
            padding,
            h_out,
            w_out,
        })
    }

    fn patch_len(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn out_pixels(&self) -> usize {
        self.h_out * self.w_out
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.padding == 0
    }

    /// Unfolds one image (`c_in × h × w`) into a `patch_len × out_pixels` matrix.
    fn im2col(&self, image: &[f64], cols: &mut [f64]) {
        let p = self.out_pixels();
        for c in 0..self.c_in {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oi in 0..self.h_out {
                        let ii = (oi * self.stride + ki) as isize - self.padding as isize;
                        let line = &mut dst[oi * self.w_out..(oi + 1) * self.w_out];
                        if ii < 0 || ii >= self.h as isize {
                            line.fill(0.0);
                            continue;
                        }
                        let src = &image[(c * self.h + ii as usize) * self.w..][..self.w];
                        for (oj, v) in line.iter_mut().enumerate() {
                            let jj = (oj * self.stride + kj) as isize - self.padding as isize;
                            *v = if jj < 0 || jj >= self.w as isize {
                                0.0
                            } else {
                                src[jj as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Self::im2col`]: scatters-adds columns back into an image.
    fn col2im(&self, cols: &[f64], image: &mut [f64]) {
        let p = self.out_pixels();
        for c in 0..self.c_in {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let src = &cols[row * p..(row + 1) * p];
                    for oi in 0..self.h_out {
                        let ii = (oi * self.stride + ki) as isize - self.padding as isize;
                        if ii < 0 || ii >= self.h as isize {
                            continue;
                        }
                        let dst = &mut image[(c * self.h + ii as usize) * self.w..][..self.w];
                        for oj in 0..self.w_out {
                            let jj = (oj * self.stride + kj) as isize - self.padding as isize;
                            if jj >= 0 && jj < self.w as isize {
                                dst[jj as usize] += src[oi * self.w_out + oj];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `c (m×n) = alpha·a·b + beta·c` with explicit row/column strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the slices cover every index addressed by the given strides and dims.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// 2-D cross-correlation with zero padding.
pub fn conv2d(
    input: &Tensor,
    kernel: &Tensor,
    bias: Option<&[f64]>,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let g = ConvGeometry::new(input, kernel, stride, padding)?;
    if let Some(b) = bias {
        if b.len() != g.c_out {
            return Err(Error::Shape {
                what: "conv2d bias vs output channels",
                left: vec![b.len()],
                right: kernel.shape().to_vec(),
            });
        }
    }
    let (ck, p) = (g.patch_len(), g.out_pixels());
    let in_len = g.c_in * g.h * g.w;
    let mut out = vec![0.0; g.n * g.c_out * p];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![0.0; ck * p] };
    for n in 0..g.n {
        let image = &input.data()[n * in_len..(n + 1) * in_len];
        let col: &[f64] = if g.is_pointwise() {
            image
        } else {
            g.im2col(image, &mut cols);
            &cols
        };
        let dst = &mut out[n * g.c_out * p..(n + 1) * g.c_out * p];
        if let Some(b) = bias {
            for (o, row) in dst.chunks_exact_mut(p).enumerate() {
                row.fill(b[o]);
            }
        }
        gemm(
            g.c_out,
            ck,
            p,
            kernel.data(),
            (ck as isize, 1),
            col,
            (p as isize, 1),
            if bias.is_some() { 1.0 } else { 0.0 },
            dst,
        );
    }
    Tensor::new(&[g.n, g.c_out, g.h_out, g.w_out], out)
}

pub struct ConvGrads {
    pub input: Tensor,
    pub kernel: Tensor,
    pub bias: Vec<f64>,
}

pub fn conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    stride: usize,
    padding: usize,
    grad_out: &Tensor,
) -> Result<ConvGrads> {
    let g = ConvGeometry::new(input, kernel, stride, padding)?;
    let expected = [g.n, g.c_out, g.h_out, g.w_out];
    if grad_out.shape() != expected {
        return Err(Error::Shape {
            what: "conv2d upstream gradient",
            left: grad_out.shape().to_vec(),
            right: expected.to_vec(),
        });
    }
    let (ck, p) = (g.patch_len(), g.out_pixels());
    let in_len = g.c_in * g.h * g.w;
    let mut d_input = vec![0.0; input.len()];
    let mut d_kernel = vec![0.0; kernel.len()];
    let mut d_bias = vec![0.0; g.c_out];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![0.0; ck * p] };
    let mut d_cols = vec![0.0; ck * p];
    for n in 0..g.n {
        let image = &input.data()[n * in_len..(n + 1) * in_len];
        let dy = &grad_out.data()[n * g.c_out * p..(n + 1) * g.c_out * p];
        for (o, row) in dy.chunks_exact(p).enumerate() {
            d_bias[o] += row.iter().sum::<f64>();
        }
        let col: &[f64] = if g.is_pointwise() {
            image
        } else {
            g.im2col(image, &mut cols);
            &cols
        };
        // dK += dY · colᵀ
        gemm(
            g.c_out,
            p,
            ck,
            dy,
            (p as isize, 1),
            col,
            (1, p as isize),
            1.0,
            &mut d_kernel,
        );
        // dcol = Kᵀ · dY
        gemm(
            ck,
            g.c_out,
            p,
            kernel.data(),
            (1, ck as isize),
            dy,
            (p as isize, 1),
            0.0,
            &mut d_cols,
        );
        let dst = &mut d_input[n * in_len..(n + 1) * in_len];
        if g.is_pointwise() {
            dst.copy_from_slice(&d_cols);
        } else {
            g.col2im(&d_cols, dst);
        }
    }
    Ok(ConvGrads {
        input: Tensor::new(input.shape(), d_input)?,
        kernel: Tensor::new(kernel.shape(), d_kernel)?,
        bias: d_bias,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Infer,
}

/// Per-channel running statistics of a batchnorm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl RunningStats {
    pub const DEFAULT_MOMENTUM: f64 = 0.1;
    pub const DEFAULT_EPS: f64 = 1e-5;

    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            momentum: Self::DEFAULT_MOMENTUM,
            eps: Self::DEFAULT_EPS,
        }
    }

    fn validate(&self, channels: usize) -> Result<()> {
        if !(self.eps > 0.0) {
            return Err(invalid("batchnorm eps must be positive"));
        }
        if !(self.momentum > 0.0 && self.momentum < 1.0) {
            return Err(invalid("batchnorm momentum must lie in (0,1)"));
        }
        if self.mean.len() != channels || self.var.len() != channels {
            return Err(Error::Shape {
                what: "batchnorm running stats vs channels",
                left: vec![self.mean.len(), self.var.len()],
                right: vec![channels],
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running: RunningStats,
    pub mode: Mode,
}

impl BatchNormParams {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running: RunningStats::new(channels),
            mode: Mode::Train,
        }
    }
}

/// Values the train-mode backward pass needs.
#[derive(Clone, Debug)]
pub struct BatchNormSaved {
    pub x_hat: Tensor,
    pub inv_std: Vec<f64>,
}

fn check_bn_shapes(input: &Tensor, gamma: &[f64], beta: &[f64]) -> Result<(usize, usize, usize)> {
    let (n, c, h, w) = input.nchw()?;
    if gamma.len() != c || beta.len() != c {
        return Err(Error::Shape {
            what: "batchnorm gamma/beta vs channels",
            left: vec![gamma.len(), beta.len()],
            right: input.shape().to_vec(),
        });
    }
    Ok((n, c, h * w))
}

/// Train-mode batchnorm: normalizes with batch mean and population variance and
/// folds the batch statistics into `running`.
pub fn batchnorm_train(
    input: &Tensor,
    gamma: &[f64],
    beta: &[f64],
    running: &mut RunningStats,
) -> Result<(Tensor, BatchNormSaved)> {
    let (n, c, hw) = check_bn_shapes(input, gamma, beta)?;
    running.validate(c)?;
    let count = n * hw;
    if count < 2 {
        return Err(Error::DegenerateBatch(count));
    }
    let x = input.data();
    let mut out = vec![0.0; x.len()];
    let mut x_hat = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; c];
    for ch in 0..c {
        let plane = |b: usize| (b * c + ch) * hw..(b * c + ch + 1) * hw;
        let mean = (0..n).map(|b| x[plane(b)].iter().sum::<f64>()).sum::<f64>() / count as f64;
        let var = (0..n)
            .map(|b| x[plane(b)].iter().map(|v| (v - mean).powi(2)).sum::<f64>())
            .sum::<f64>()
            / count as f64;
        let is = 1.0 / (var + running.eps).sqrt();
        inv_std[ch] = is;
        for b in 0..n {
            for i in plane(b) {
                let xh = (x[i] - mean) * is;
                x_hat[i] = xh;
                out[i] = gamma[ch] * xh + beta[ch];
            }
        }
        let m = running.momentum;
        running.mean[ch] = (1.0 - m) * running.mean[ch] + m * mean;
        running.var[ch] = (1.0 - m) * running.var[ch] + m * var;
    }
    let shape = input.shape();
    Ok((
        Tensor::new(shape, out)?,
        BatchNormSaved {
            x_hat: Tensor::new(shape, x_hat)?,
            inv_std,
        },
    ))
}

pub fn batchnorm_infer(
    input: &Tensor,
    gamma: &[f64],
    beta: &[f64],
    running: &RunningStats,
) -> Result<Tensor> {
    let (n, c, hw) = check_bn_shapes(input, gamma, beta)?;
    running.validate(c)?;
    let x = input.data();
    let mut out = vec![0.0; x.len()];
    for b in 0..n {
        for ch in 0..c {
            let is = 1.0 / (running.var[ch] + running.eps).sqrt();
            let range = (b * c + ch) * hw..(b * c + ch + 1) * hw;
            for i in range {
                out[i] = gamma[ch] * (x[i] - running.mean[ch]) * is + beta[ch];
            }
        }
    }
    Tensor::new(input.shape(), out)
}

/// Batchnorm through [`BatchNormParams`], dispatching on its mode.
pub fn batchnorm(input: &Tensor, params: &mut BatchNormParams) -> Result<Tensor> {
    match params.mode {
        Mode::Train => {
            batchnorm_train(input, &params.gamma, &params.beta, &mut params.running).map(|r| r.0)
        }
        Mode::Infer => batchnorm_infer(input, &params.gamma, &params.beta, &params.running),
    }
}

pub struct BatchNormGrads {
    pub input: Tensor,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

pub fn batchnorm_train_backward(
    grad_out: &Tensor,
    saved: &BatchNormSaved,
    gamma: &[f64],
) -> Result<BatchNormGrads> {
    grad_out.expect_same_shape(&saved.x_hat, "batchnorm upstream gradient")?;
    let (n, c, h, w) = grad_out.nchw()?;
    let hw = h * w;
    let m = (n * hw) as f64;
    let dy = grad_out.data();
    let xh = saved.x_hat.data();
    let mut dx = vec![0.0; dy.len()];
    let mut d_gamma = vec![0.0; c];
    let mut d_beta = vec![0.0; c];
    for ch in 0..c {
        let planes = || (0..n).flat_map(move |b| (b * c + ch) * hw..(b * c + ch + 1) * hw);
        let (mut sum_dy, mut sum_dy_xh) = (0.0, 0.0);
        for i in planes() {
            sum_dy += dy[i];
            sum_dy_xh += dy[i] * xh[i];
        }
        d_gamma[ch] = sum_dy_xh;
        d_beta[ch] = sum_dy;
        let k = gamma[ch] * saved.inv_std[ch] / m;
        for i in planes() {
            dx[i] = k * (m * dy[i] - sum_dy - xh[i] * sum_dy_xh);
        }
    }
    Ok(BatchNormGrads {
        input: Tensor::new(grad_out.shape(), dx)?,
        gamma: d_gamma,
        beta: d_beta,
    })
}

pub fn batchnorm_infer_backward(
    grad_out: &Tensor,
    input: &Tensor,
    gamma: &[f64],
    running: &RunningStats,
) -> Result<BatchNormGrads> {
    grad_out.expect_same_shape(input, "batchnorm upstream gradient")?;
    let (n, c, h, w) = input.nchw()?;
    let hw = h * w;
    let (dy, x) = (grad_out.data(), input.data());
    let mut dx = vec![0.0; dy.len()];
    let mut d_gamma = vec![0.0; c];
    let mut d_beta = vec![0.0; c];
    for b in 0..n {
        for ch in 0..c {
            let is = 1.0 / (running.var[ch] + running.eps).sqrt();
            for i in (b * c + ch) * hw..(b * c + ch + 1) * hw {
                dx[i] = dy[i] * gamma[ch] * is;
                d_gamma[ch] += dy[i] * (x[i] - running.mean[ch]) * is;
                d_beta[ch] += dy[i];
            }
        }
    }
    Ok(BatchNormGrads {
        input: Tensor::new(input.shape(), dx)?,
        gamma: d_gamma,
        beta: d_beta,
    })
}

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.1;

pub fn leaky_relu(input: &Tensor, slope: f64) -> Tensor {
    input.map(|x| if x >= 0.0 { x } else { slope * x })
}

pub fn leaky_relu_backward(input: &Tensor, slope: f64, grad_out: &Tensor) -> Result<Tensor> {
    input.zip_map(grad_out, |x, g| if x >= 0.0 { g } else { slope * g })
}

/// Logistic function, stable over the whole `f64` range.
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)`, stable for large |x|.
pub fn softplus_scalar(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Inverse of the logistic function.
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn sigmoid(input: &Tensor) -> Tensor {
    input.map(sigmoid_scalar)
}

/// Gradient of sigmoid given its forward output.
pub fn sigmoid_backward(output: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    output.zip_map(grad_out, |y, g| g * y * (1.0 - y))
}
