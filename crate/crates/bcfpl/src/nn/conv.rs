//! Strided 2-d convolution with square kernels and no padding.

use super::tensor::{dims4, Scalar, Tensor};
use super::NnError;

/// Weights are laid out `[filters, in_channels, k, k]`, bias `[filters]`.
/// Output spatial size along each axis is `(in - k) / stride + 1`, rounded
/// down, and the input must be at least as large as the kernel.
#[derive(Debug, Clone)]
pub struct ConvLayer<T> {
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
}

impl<T: Scalar> ConvLayer<T> {
    pub fn new(weights: Tensor<T>, bias: Tensor<T>, stride: usize) -> Result<Self, NnError> {
        let (filters, _in_ch, kh, kw) = dims4(&weights, "conv weights")?;
        if kh != kw {
            return Err(NnError::InvalidArgument(format!(
                "kernel must be square, got {kh}x{kw}"
            )));
        }
        if stride == 0 {
            return Err(NnError::InvalidArgument("stride must be at least 1".into()));
        }
        if bias.shape() != [filters] {
            return Err(NnError::ShapeMismatch {
                context: "conv bias",
                expected: vec![filters],
                got: bias.shape().to_vec(),
            });
        }
        Ok(Self {
            weights,
            bias,
            stride,
        })
    }

    pub fn filters(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.weights.shape()[2]
    }

    /// Output side for a given input side, or an error when the kernel no
    /// longer fits.
    pub fn output_side(&self, input: usize) -> Result<usize, NnError> {
        if input < self.kernel() {
            return Err(NnError::InputTooSmall {
                height: input,
                width: input,
                kernel: self.kernel(),
            });
        }
        Ok((input - self.kernel()) / self.stride + 1)
    }
}

fn check_input<T: Scalar>(
    x: &Tensor<T>,
    layer: &ConvLayer<T>,
) -> Result<(usize, usize, usize, usize, usize, usize), NnError> {
    let (n, c, h, w) = dims4(x, "conv input")?;
    if c != layer.in_channels() {
        return Err(NnError::ShapeMismatch {
            context: "conv input channels",
            expected: vec![layer.in_channels()],
            got: vec![c],
        });
    }
    let k = layer.kernel();
    if h < k || w < k {
        return Err(NnError::InputTooSmall {
            height: h,
            width: w,
            kernel: k,
        });
    }
    let s = layer.stride;
    Ok((n, c, h, w, (h - k) / s + 1, (w - k) / s + 1))
}

/// Cross-correlates `x` `[n, c, h, w]` with the layer's filters and adds
/// the bias, producing `[n, filters, oh, ow]`.
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    layer: &ConvLayer<T>,
) -> Result<Tensor<T>, NnError> {
    let (n, c, h, w, oh, ow) = check_input(x, layer)?;
    let k = layer.kernel();
    let s = layer.stride;
    let filters = layer.filters();
    let xd = x.data();
    let wd = layer.weights.data();
    let bd = layer.bias.data();
    let mut out = vec![T::zero(); n * filters * oh * ow];
    for ni in 0..n {
        for f in 0..filters {
            let bias = bd[f];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias;
                    for ci in 0..c {
                        let x_plane = ((ni * c) + ci) * h;
                        let w_plane = ((f * c) + ci) * k;
                        for ky in 0..k {
                            let x_row = (x_plane + oy * s + ky) * w + ox * s;
                            let w_row = (w_plane + ky) * k;
                            let xs = &xd[x_row..x_row + k];
                            let ws = &wd[w_row..w_row + k];
                            for i in 0..k {
                                acc = acc + xs[i] * ws[i];
                            }
                        }
                    }
                    out[((ni * filters + f) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    Tensor::from_vec(&[n, filters, oh, ow], out)
}

/// Gradients of a scalar loss with respect to the convolution's input,
/// weights, and bias, given the gradient at its output.
#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    layer: &ConvLayer<T>,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>, NnError> {
    let (n, c, h, w, oh, ow) = check_input(x, layer)?;
    let k = layer.kernel();
    let s = layer.stride;
    let filters = layer.filters();
    if grad_out.shape() != [n, filters, oh, ow] {
        return Err(NnError::ShapeMismatch {
            context: "conv output gradient",
            expected: vec![n, filters, oh, ow],
            got: grad_out.shape().to_vec(),
        });
    }
    let xd = x.data();
    let wd = layer.weights.data();
    let gd = grad_out.data();
    let mut dx = vec![T::zero(); xd.len()];
    let mut dw = vec![T::zero(); wd.len()];
    let mut db = vec![T::zero(); filters];
    for ni in 0..n {
        for f in 0..filters {
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = gd[((ni * filters + f) * oh + oy) * ow + ox];
                    db[f] = db[f] + g;
                    for ci in 0..c {
                        let x_plane = ((ni * c) + ci) * h;
                        let w_plane = ((f * c) + ci) * k;
                        for ky in 0..k {
                            let x_row = (x_plane + oy * s + ky) * w + ox * s;
                            let w_row = (w_plane + ky) * k;
                            for i in 0..k {
                                dw[w_row + i] = dw[w_row + i] + g * xd[x_row + i];
                                dx[x_row + i] = dx[x_row + i] + g * wd[w_row + i];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        input: Tensor::from_vec(&[n, c, h, w], dx)?,
        weights: Tensor::from_vec(layer.weights.shape(), dw)?,
        bias: Tensor::from_vec(&[filters], db)?,
    })
}
