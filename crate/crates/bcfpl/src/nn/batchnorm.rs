//! Per-channel batch normalization over 2-d `[n, c]` or 4-d `[n, c, h, w]`
//! activations.
//!
//! Training normalizes with the batch mean and biased variance and keeps
//! exponential running estimates for inference; the running variance is
//! updated with the unbiased batch variance. Inference normalizes with the
//! stored estimates and touches nothing.

use super::tensor::{scalar, Scalar, Tensor};
use super::NnError;

#[derive(Debug, Clone)]
pub struct BatchNormLayer<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub eps: T,
    pub momentum: T,
}

impl<T: Scalar> BatchNormLayer<T> {
    /// Identity transform with unit running variance.
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::filled(&[channels], T::one()),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], T::one()),
            eps: scalar(1e-5),
            momentum: scalar(0.1),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.numel()
    }
}

/// (batch, channels, per-channel spatial extent) for the accepted ranks.
fn layout<T: Scalar>(x: &Tensor<T>, channels: usize) -> Result<(usize, usize), NnError> {
    let (n, c, spatial) = match *x.shape() {
        [n, c] => (n, c, 1),
        [n, c, h, w] => (n, c, h * w),
        _ => {
            return Err(NnError::ShapeMismatch {
                context: "batchnorm input",
                expected: vec![0, channels],
                got: x.shape().to_vec(),
            })
        }
    };
    if c != channels {
        return Err(NnError::ShapeMismatch {
            context: "batchnorm channels",
            expected: vec![channels],
            got: vec![c],
        });
    }
    Ok((n, spatial))
}

/// Everything the backward pass needs from the forward pass.
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    normalized: Tensor<T>,
    inv_std: Vec<T>,
}

/// Normalizes with batch statistics and updates the running estimates.
/// The batch must contribute at least 2 values per channel.
pub fn batchnorm_forward_train<T: Scalar>(
    x: &Tensor<T>,
    layer: &mut BatchNormLayer<T>,
) -> Result<(Tensor<T>, BnCache<T>), NnError> {
    let channels = layer.channels();
    let (n, spatial) = layout(x, channels)?;
    if n < 2 {
        return Err(NnError::DegenerateBatch(n));
    }
    let count = n * spatial;
    let count_t: T = scalar(count as f64);
    let xd = x.data();
    let mut normalized = vec![T::zero(); xd.len()];
    let mut inv_std = vec![T::zero(); channels];
    let one = T::one();
    for c in 0..channels {
        let mut sum = T::zero();
        for ni in 0..n {
            let base = (ni * channels + c) * spatial;
            for s in 0..spatial {
                sum = sum + xd[base + s];
            }
        }
        let mean = sum / count_t;
        let mut sq = T::zero();
        for ni in 0..n {
            let base = (ni * channels + c) * spatial;
            for s in 0..spatial {
                let d = xd[base + s] - mean;
                sq = sq + d * d;
            }
        }
        let var = sq / count_t;
        let istd = one / (var + layer.eps).sqrt();
        inv_std[c] = istd;
        for ni in 0..n {
            let base = (ni * channels + c) * spatial;
            for s in 0..spatial {
                normalized[base + s] = (xd[base + s] - mean) * istd;
            }
        }
        let m = layer.momentum;
        let rm = layer.running_mean.data_mut();
        rm[c] = (one - m) * rm[c] + m * mean;
        let var_unbiased = sq / scalar((count - 1) as f64);
        let rv = layer.running_var.data_mut();
        rv[c] = (one - m) * rv[c] + m * var_unbiased;
    }
    let normalized = Tensor::from_vec(x.shape(), normalized)?;
    let mut out = normalized.clone();
    scale_shift(&mut out, layer, n, spatial);
    Ok((out, BnCache { normalized, inv_std }))
}

/// Normalizes with the stored running estimates; never mutates the layer.
pub fn batchnorm_forward_infer<T: Scalar>(
    x: &Tensor<T>,
    layer: &BatchNormLayer<T>,
) -> Result<Tensor<T>, NnError> {
    let channels = layer.channels();
    let (n, spatial) = layout(x, channels)?;
    let one = T::one();
    let mut out = x.clone();
    let od = out.data_mut();
    for c in 0..channels {
        let mean = layer.running_mean.data()[c];
        let istd = one / (layer.running_var.data()[c] + layer.eps).sqrt();
        let gamma = layer.gamma.data()[c];
        let beta = layer.beta.data()[c];
        for ni in 0..n {
            let base = (ni * channels + c) * spatial;
            for s in 0..spatial {
                od[base + s] = (od[base + s] - mean) * istd * gamma + beta;
            }
        }
    }
    Ok(out)
}

fn scale_shift<T: Scalar>(t: &mut Tensor<T>, layer: &BatchNormLayer<T>, n: usize, spatial: usize) {
    let channels = layer.channels();
    let d = t.data_mut();
    for c in 0..channels {
        let gamma = layer.gamma.data()[c];
        let beta = layer.beta.data()[c];
        for ni in 0..n {
            let base = (ni * channels + c) * spatial;
            for s in 0..spatial {
                d[base + s] = d[base + s] * gamma + beta;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct BnGrads<T> {
    pub input: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

/// Train-mode gradient, differentiating through the batch mean and
/// variance:
///
/// dx = inv_std * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat))
pub fn batchnorm_backward<T: Scalar>(
    cache: &BnCache<T>,
    layer: &BatchNormLayer<T>,
    grad_out: &Tensor<T>,
) -> Result<BnGrads<T>, NnError> {
    let channels = layer.channels();
    let (n, spatial) = layout(grad_out, channels)?;
    if grad_out.shape() != cache.normalized.shape() {
        return Err(NnError::ShapeMismatch {
            context: "batchnorm output gradient",
            expected: cache.normalized.shape().to_vec(),
            got: grad_out.shape().to_vec(),
        });
    }
    let count_t: T = scalar((n * spatial) as f64);
    let gd = grad_out.data();
    let xhat = cache.normalized.data();
    let mut dx = vec![T::zero(); gd.len()];
    let mut dgamma = vec![T::zero(); channels];
    let mut dbeta = vec![T::zero(); channels];
    for c in 0..channels {
        let gamma = layer.gamma.data()[c];
        let istd = cache.inv_std[c];
        let mut sum_dxhat = T::zero();
        let mut sum_dxhat_xhat = T::zero();
        for ni in 0..n {
            let base = (ni * channels + c) * spatial;
            for s in 0..spatial {
                let g = gd[base + s];
                let xh = xhat[base + s];
                dbeta[c] = dbeta[c] + g;
                dgamma[c] = dgamma[c] + g * xh;
                let dxh = g * gamma;
                sum_dxhat = sum_dxhat + dxh;
                sum_dxhat_xhat = sum_dxhat_xhat + dxh * xh;
            }
        }
        let mean_dxhat = sum_dxhat / count_t;
        let mean_dxhat_xhat = sum_dxhat_xhat / count_t;
        for ni in 0..n {
            let base = (ni * channels + c) * spatial;
            for s in 0..spatial {
                let dxh = gd[base + s] * gamma;
                dx[base + s] = istd * (dxh - mean_dxhat - xhat[base + s] * mean_dxhat_xhat);
            }
        }
    }
    Ok(BnGrads {
        input: Tensor::from_vec(grad_out.shape(), dx)?,
        gamma: Tensor::from_vec(&[channels], dgamma)?,
        beta: Tensor::from_vec(&[channels], dbeta)?,
    })
}
