//! Pointwise and dense layers: ReLU, inverted dropout, fully connected,
//! and softmax cross-entropy.

use rand::Rng;

use super::tensor::{dims2, scalar, Scalar, Tensor};
use super::NnError;

pub fn relu_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut out = x.clone();
    for v in out.data_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
    out
}

/// Passes the gradient where the forward input was positive. The gradient
/// at exactly zero is taken as zero.
pub fn relu_backward<T: Scalar>(
    input: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>, NnError> {
    if input.shape() != grad_out.shape() {
        return Err(NnError::ShapeMismatch {
            context: "relu gradient",
            expected: input.shape().to_vec(),
            got: grad_out.shape().to_vec(),
        });
    }
    let mut out = grad_out.clone();
    for (v, &x) in out.data_mut().iter_mut().zip(input.data()) {
        if x <= T::zero() {
            *v = T::zero();
        }
    }
    Ok(out)
}

/// Per-element multipliers recorded by the forward pass: 0 for dropped
/// units, 1/(1-p) for survivors.
#[derive(Debug, Clone)]
pub struct DropoutMask<T> {
    multipliers: Tensor<T>,
}

impl<T> DropoutMask<T> {
    /// The recorded multipliers, one per element of the forward input.
    pub fn multipliers(&self) -> &Tensor<T> {
        &self.multipliers
    }
}

/// Inverted dropout: zero each unit with probability `p` and scale the
/// survivors by 1/(1-p), so the expected activation is unchanged and
/// inference needs no rescaling (inference simply skips this call).
pub fn dropout_forward_train<T: Scalar, R: Rng>(
    x: &Tensor<T>,
    p: f64,
    rng: &mut R,
) -> Result<(Tensor<T>, DropoutMask<T>), NnError> {
    if !(0.0..1.0).contains(&p) {
        return Err(NnError::InvalidArgument(format!(
            "dropout probability {p} outside [0, 1)"
        )));
    }
    let scale: T = scalar(1.0 / (1.0 - p));
    let mut multipliers = Tensor::zeros(x.shape());
    let mut out = x.clone();
    for (m, v) in multipliers.data_mut().iter_mut().zip(out.data_mut()) {
        if rng.random::<f64>() < p {
            *v = T::zero();
        } else {
            *m = scale;
            *v = *v * scale;
        }
    }
    Ok((out, DropoutMask { multipliers }))
}

pub fn dropout_backward<T: Scalar>(
    mask: &DropoutMask<T>,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>, NnError> {
    if mask.multipliers.shape() != grad_out.shape() {
        return Err(NnError::ShapeMismatch {
            context: "dropout gradient",
            expected: mask.multipliers.shape().to_vec(),
            got: grad_out.shape().to_vec(),
        });
    }
    let mut out = grad_out.clone();
    for (v, &m) in out.data_mut().iter_mut().zip(mask.multipliers.data()) {
        *v = *v * m;
    }
    Ok(out)
}

/// Fully connected layer; weights are `[outputs, inputs]`, bias `[outputs]`.
#[derive(Debug, Clone)]
pub struct LinearLayer<T> {
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> LinearLayer<T> {
    pub fn new(weights: Tensor<T>, bias: Tensor<T>) -> Result<Self, NnError> {
        let (outputs, _inputs) = dims2(&weights, "linear weights")?;
        if bias.shape() != [outputs] {
            return Err(NnError::ShapeMismatch {
                context: "linear bias",
                expected: vec![outputs],
                got: bias.shape().to_vec(),
            });
        }
        Ok(Self { weights, bias })
    }

    pub fn outputs(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn inputs(&self) -> usize {
        self.weights.shape()[1]
    }
}

/// y[n, o] = sum_i x[n, i] * w[o, i] + b[o]
pub fn linear_forward<T: Scalar>(
    x: &Tensor<T>,
    layer: &LinearLayer<T>,
) -> Result<Tensor<T>, NnError> {
    let (n, inputs) = dims2(x, "linear input")?;
    if inputs != layer.inputs() {
        return Err(NnError::ShapeMismatch {
            context: "linear input width",
            expected: vec![layer.inputs()],
            got: vec![inputs],
        });
    }
    let outputs = layer.outputs();
    let xd = x.data();
    let wd = layer.weights.data();
    let bd = layer.bias.data();
    let mut out = vec![T::zero(); n * outputs];
    for ni in 0..n {
        let xrow = &xd[ni * inputs..(ni + 1) * inputs];
        for o in 0..outputs {
            let wrow = &wd[o * inputs..(o + 1) * inputs];
            let mut acc = bd[o];
            for i in 0..inputs {
                acc = acc + xrow[i] * wrow[i];
            }
            out[ni * outputs + o] = acc;
        }
    }
    Tensor::from_vec(&[n, outputs], out)
}

#[derive(Debug, Clone)]
pub struct LinearGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn linear_backward<T: Scalar>(
    x: &Tensor<T>,
    layer: &LinearLayer<T>,
    grad_out: &Tensor<T>,
) -> Result<LinearGrads<T>, NnError> {
    let (n, inputs) = dims2(x, "linear input")?;
    let outputs = layer.outputs();
    if inputs != layer.inputs() || grad_out.shape() != [n, outputs] {
        return Err(NnError::ShapeMismatch {
            context: "linear gradient",
            expected: vec![n, outputs],
            got: grad_out.shape().to_vec(),
        });
    }
    let xd = x.data();
    let wd = layer.weights.data();
    let gd = grad_out.data();
    let mut dx = vec![T::zero(); n * inputs];
    let mut dw = vec![T::zero(); outputs * inputs];
    let mut db = vec![T::zero(); outputs];
    for ni in 0..n {
        let xrow = &xd[ni * inputs..(ni + 1) * inputs];
        for o in 0..outputs {
            let g = gd[ni * outputs + o];
            db[o] = db[o] + g;
            let wrow = &wd[o * inputs..(o + 1) * inputs];
            let dwrow = &mut dw[o * inputs..(o + 1) * inputs];
            let dxrow = &mut dx[ni * inputs..(ni + 1) * inputs];
            for i in 0..inputs {
                dwrow[i] = dwrow[i] + g * xrow[i];
                dxrow[i] = dxrow[i] + g * wrow[i];
            }
        }
    }
    Ok(LinearGrads {
        input: Tensor::from_vec(&[n, inputs], dx)?,
        weights: Tensor::from_vec(&[outputs, inputs], dw)?,
        bias: Tensor::from_vec(&[outputs], db)?,
    })
}

/// Row-wise softmax with the max-subtraction trick.
pub fn softmax_probs<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    let (n, classes) = dims2(logits, "softmax logits")?;
    let mut out = logits.clone();
    let od = out.data_mut();
    for ni in 0..n {
        let row = &mut od[ni * classes..(ni + 1) * classes];
        let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    Ok(out)
}

/// Mean softmax cross-entropy over the batch and its gradient with respect
/// to the logits: (softmax - onehot) / n.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<(T, Tensor<T>), NnError> {
    let (n, classes) = dims2(logits, "cross-entropy logits")?;
    if labels.len() != n {
        return Err(NnError::ShapeMismatch {
            context: "cross-entropy labels",
            expected: vec![n],
            got: vec![labels.len()],
        });
    }
    if n == 0 {
        return Err(NnError::InvalidArgument("empty batch".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(NnError::InvalidArgument(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    let probs = softmax_probs(logits)?;
    let n_t: T = scalar(n as f64);
    let mut loss = T::zero();
    let mut grad = probs.clone();
    let gd = grad.data_mut();
    for (ni, &label) in labels.iter().enumerate() {
        let p = probs.data()[ni * classes + label];
        loss = loss - p.max(T::min_positive_value()).ln();
        gd[ni * classes + label] = gd[ni * classes + label] - T::one();
    }
    for v in gd.iter_mut() {
        *v = *v / n_t;
    }
    Ok((loss / n_t, grad))
}
