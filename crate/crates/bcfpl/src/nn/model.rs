//! The occupancy classifier: two strided 7x7 convolutions, each followed
//! by ReLU and batch normalization, then a 60-unit hidden layer with
//! dropout and a 2-way output. With 50x50 RGB input the feature map
//! shrinks 50 -> 15 -> 5, giving 16 * 5 * 5 = 400 flattened features and
//! 31,702 trainable parameters in total.

use rand::Rng;

use crate::rng::{derive_seed, domain, rng_from_seed};

use super::batchnorm::{
    batchnorm_backward, batchnorm_forward_infer, batchnorm_forward_train, BatchNormLayer, BnCache,
};
use super::conv::{conv2d_backward, conv2d_forward, ConvLayer};
use super::ops::{
    dropout_backward, dropout_forward_train, linear_backward, linear_forward, relu_backward,
    relu_forward, DropoutMask, LinearLayer,
};
use super::tensor::{scalar, Scalar, Tensor};
use super::NnError;

pub const INPUT_CHANNELS: usize = 3;
pub const INPUT_SIDE: usize = 50;
pub const KERNEL_SIDE: usize = 7;
pub const CONV1_FILTERS: usize = 8;
pub const CONV1_STRIDE: usize = 3;
pub const CONV2_FILTERS: usize = 16;
pub const CONV2_STRIDE: usize = 2;
pub const CONV1_OUT_SIDE: usize = (INPUT_SIDE - KERNEL_SIDE) / CONV1_STRIDE + 1;
pub const CONV2_OUT_SIDE: usize = (CONV1_OUT_SIDE - KERNEL_SIDE) / CONV2_STRIDE + 1;
pub const FLAT_WIDTH: usize = CONV2_FILTERS * CONV2_OUT_SIDE * CONV2_OUT_SIDE;
pub const HIDDEN_WIDTH: usize = 60;
pub const NUM_CLASSES: usize = 2;
pub const DEFAULT_DROPOUT: f64 = 0.5;

/// Number of trainable tensors, in the fixed order used by
/// [`BcfplModel::trainable`] and mirrored by gradients and optimizer state.
pub const TRAINABLE_TENSORS: usize = 12;

/// Names of the trainable tensors, in [`BcfplModel::trainable`] order.
pub const TRAINABLE_NAMES: [&str; TRAINABLE_TENSORS] = [
    "conv1.weights",
    "conv1.bias",
    "bn1.gamma",
    "bn1.beta",
    "conv2.weights",
    "conv2.bias",
    "bn2.gamma",
    "bn2.beta",
    "fc1.weights",
    "fc1.bias",
    "fc2.weights",
    "fc2.bias",
];

#[derive(Debug, Clone)]
pub struct BcfplModel<T> {
    pub conv1: ConvLayer<T>,
    pub bn1: BatchNormLayer<T>,
    pub conv2: ConvLayer<T>,
    pub bn2: BatchNormLayer<T>,
    pub fc1: LinearLayer<T>,
    pub fc2: LinearLayer<T>,
    /// Drop probability for the hidden layer during training.
    pub dropout_p: f64,
}

/// Kaiming-uniform fan-in init: U(-b, b) with b = sqrt(6 / fan_in), which
/// targets Var(w) = 2 / fan_in for the ReLU layers that follow.
fn kaiming_uniform<T: Scalar, R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let data = (0..shape.iter().product::<usize>())
        .map(|_| scalar(rng.random_range(-bound..bound)))
        .collect();
    Tensor::from_vec(shape, data).expect("shape/product agree")
}

impl<T: Scalar> BcfplModel<T> {
    /// Fresh weights, deterministic in `seed`: weight tensors are drawn in
    /// declaration order from one stream, biases start at zero, batch norm
    /// starts as the identity.
    pub fn init(seed: u64) -> Self {
        let mut rng = rng_from_seed(derive_seed(seed, &[domain::INIT]));
        let conv1_w = kaiming_uniform(
            &mut rng,
            &[CONV1_FILTERS, INPUT_CHANNELS, KERNEL_SIDE, KERNEL_SIDE],
            INPUT_CHANNELS * KERNEL_SIDE * KERNEL_SIDE,
        );
        let conv2_w = kaiming_uniform(
            &mut rng,
            &[CONV2_FILTERS, CONV1_FILTERS, KERNEL_SIDE, KERNEL_SIDE],
            CONV1_FILTERS * KERNEL_SIDE * KERNEL_SIDE,
        );
        let fc1_w = kaiming_uniform(&mut rng, &[HIDDEN_WIDTH, FLAT_WIDTH], FLAT_WIDTH);
        let fc2_w = kaiming_uniform(&mut rng, &[NUM_CLASSES, HIDDEN_WIDTH], HIDDEN_WIDTH);
        Self {
            conv1: ConvLayer::new(conv1_w, Tensor::zeros(&[CONV1_FILTERS]), CONV1_STRIDE)
                .expect("fixed geometry"),
            bn1: BatchNormLayer::new(CONV1_FILTERS),
            conv2: ConvLayer::new(conv2_w, Tensor::zeros(&[CONV2_FILTERS]), CONV2_STRIDE)
                .expect("fixed geometry"),
            bn2: BatchNormLayer::new(CONV2_FILTERS),
            fc1: LinearLayer::new(fc1_w, Tensor::zeros(&[HIDDEN_WIDTH])).expect("fixed geometry"),
            fc2: LinearLayer::new(fc2_w, Tensor::zeros(&[NUM_CLASSES])).expect("fixed geometry"),
            dropout_p: DEFAULT_DROPOUT,
        }
    }

    pub fn param_count(&self) -> usize {
        self.trainable().iter().map(|t| t.numel()).sum()
    }

    /// Trainable tensors in optimizer order. Running statistics are state,
    /// not parameters, and are excluded.
    pub fn trainable(&self) -> [&Tensor<T>; TRAINABLE_TENSORS] {
        [
            &self.conv1.weights,
            &self.conv1.bias,
            &self.bn1.gamma,
            &self.bn1.beta,
            &self.conv2.weights,
            &self.conv2.bias,
            &self.bn2.gamma,
            &self.bn2.beta,
            &self.fc1.weights,
            &self.fc1.bias,
            &self.fc2.weights,
            &self.fc2.bias,
        ]
    }

    pub fn trainable_mut(&mut self) -> [&mut Tensor<T>; TRAINABLE_TENSORS] {
        [
            &mut self.conv1.weights,
            &mut self.conv1.bias,
            &mut self.bn1.gamma,
            &mut self.bn1.beta,
            &mut self.conv2.weights,
            &mut self.conv2.bias,
            &mut self.bn2.gamma,
            &mut self.bn2.beta,
            &mut self.fc1.weights,
            &mut self.fc1.bias,
            &mut self.fc2.weights,
            &mut self.fc2.bias,
        ]
    }

    /// Every persistent array, trainable or not, keyed by a stable name.
    pub fn named_arrays(&self) -> [(&'static str, &Tensor<T>); 16] {
        [
            ("conv1.weights", &self.conv1.weights),
            ("conv1.bias", &self.conv1.bias),
            ("bn1.gamma", &self.bn1.gamma),
            ("bn1.beta", &self.bn1.beta),
            ("bn1.running_mean", &self.bn1.running_mean),
            ("bn1.running_var", &self.bn1.running_var),
            ("conv2.weights", &self.conv2.weights),
            ("conv2.bias", &self.conv2.bias),
            ("bn2.gamma", &self.bn2.gamma),
            ("bn2.beta", &self.bn2.beta),
            ("bn2.running_mean", &self.bn2.running_mean),
            ("bn2.running_var", &self.bn2.running_var),
            ("fc1.weights", &self.fc1.weights),
            ("fc1.bias", &self.fc1.bias),
            ("fc2.weights", &self.fc2.weights),
            ("fc2.bias", &self.fc2.bias),
        ]
    }

    pub fn named_arrays_mut(&mut self) -> [(&'static str, &mut Tensor<T>); 16] {
        [
            ("conv1.weights", &mut self.conv1.weights),
            ("conv1.bias", &mut self.conv1.bias),
            ("bn1.gamma", &mut self.bn1.gamma),
            ("bn1.beta", &mut self.bn1.beta),
            ("bn1.running_mean", &mut self.bn1.running_mean),
            ("bn1.running_var", &mut self.bn1.running_var),
            ("conv2.weights", &mut self.conv2.weights),
            ("conv2.bias", &mut self.conv2.bias),
            ("bn2.gamma", &mut self.bn2.gamma),
            ("bn2.beta", &mut self.bn2.beta),
            ("bn2.running_mean", &mut self.bn2.running_mean),
            ("bn2.running_var", &mut self.bn2.running_var),
            ("fc1.weights", &mut self.fc1.weights),
            ("fc1.bias", &mut self.fc1.bias),
            ("fc2.weights", &mut self.fc2.weights),
            ("fc2.bias", &mut self.fc2.bias),
        ]
    }

    /// Element-wise precision change, used to lift an f32 model into the
    /// f64 checking harness.
    pub fn cast<U: Scalar>(&self) -> BcfplModel<U> {
        BcfplModel {
            conv1: ConvLayer {
                weights: self.conv1.weights.cast(),
                bias: self.conv1.bias.cast(),
                stride: self.conv1.stride,
            },
            bn1: cast_bn(&self.bn1),
            conv2: ConvLayer {
                weights: self.conv2.weights.cast(),
                bias: self.conv2.bias.cast(),
                stride: self.conv2.stride,
            },
            bn2: cast_bn(&self.bn2),
            fc1: LinearLayer {
                weights: self.fc1.weights.cast(),
                bias: self.fc1.bias.cast(),
            },
            fc2: LinearLayer {
                weights: self.fc2.weights.cast(),
                bias: self.fc2.bias.cast(),
            },
            dropout_p: self.dropout_p,
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<usize, NnError> {
        match *x.shape() {
            [n, INPUT_CHANNELS, INPUT_SIDE, INPUT_SIDE] => Ok(n),
            _ => Err(NnError::ShapeMismatch {
                context: "model input",
                expected: vec![0, INPUT_CHANNELS, INPUT_SIDE, INPUT_SIDE],
                got: x.shape().to_vec(),
            }),
        }
    }

    /// Training-mode forward pass. Updates the batch-norm running
    /// statistics and draws the dropout mask from `rng`; returns the
    /// logits plus everything [`BcfplModel::backward`] needs.
    pub fn forward_train<R: Rng>(
        &mut self,
        x: &Tensor<T>,
        rng: &mut R,
    ) -> Result<(Tensor<T>, ForwardCache<T>), NnError> {
        let n = self.check_input(x)?;
        let conv1_out = conv2d_forward(x, &self.conv1)?;
        let relu1_out = relu_forward(&conv1_out);
        let (bn1_out, bn1_cache) = batchnorm_forward_train(&relu1_out, &mut self.bn1)?;
        let conv2_out = conv2d_forward(&bn1_out, &self.conv2)?;
        let relu2_out = relu_forward(&conv2_out);
        let (bn2_out, bn2_cache) = batchnorm_forward_train(&relu2_out, &mut self.bn2)?;
        let flat = bn2_out.reshaped(&[n, FLAT_WIDTH])?;
        let fc1_out = linear_forward(&flat, &self.fc1)?;
        let relu3_out = relu_forward(&fc1_out);
        let (dropped, dropout_mask) = dropout_forward_train(&relu3_out, self.dropout_p, rng)?;
        let logits = linear_forward(&dropped, &self.fc2)?;
        let cache = ForwardCache {
            input: x.clone(),
            conv1_out,
            bn1_cache,
            bn1_out,
            conv2_out,
            bn2_cache,
            flat,
            fc1_out,
            dropout_mask,
            fc2_in: dropped,
        };
        Ok((logits, cache))
    }

    /// Inference-mode forward pass: batch norm uses its running estimates
    /// and dropout is the identity. Any batch size (including 1) works.
    pub fn forward_infer(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let n = self.check_input(x)?;
        let h = conv2d_forward(x, &self.conv1)?;
        let h = relu_forward(&h);
        let h = batchnorm_forward_infer(&h, &self.bn1)?;
        let h = conv2d_forward(&h, &self.conv2)?;
        let h = relu_forward(&h);
        let h = batchnorm_forward_infer(&h, &self.bn2)?;
        let h = h.reshaped(&[n, FLAT_WIDTH])?;
        let h = linear_forward(&h, &self.fc1)?;
        let h = relu_forward(&h);
        linear_forward(&h, &self.fc2)
    }

    /// Backpropagates a logits gradient through the cached training-mode
    /// pass, producing gradients for every trainable tensor.
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        grad_logits: &Tensor<T>,
    ) -> Result<ModelGrads<T>, NnError> {
        let fc2_grads = linear_backward(&cache.fc2_in, &self.fc2, grad_logits)?;
        let g = dropout_backward(&cache.dropout_mask, &fc2_grads.input)?;
        let g = relu_backward(&cache.fc1_out, &g)?;
        let fc1_grads = linear_backward(&cache.flat, &self.fc1, &g)?;
        let g = fc1_grads.input.reshaped(&[
            cache.input.shape()[0],
            CONV2_FILTERS,
            CONV2_OUT_SIDE,
            CONV2_OUT_SIDE,
        ])?;
        let bn2_grads = batchnorm_backward(&cache.bn2_cache, &self.bn2, &g)?;
        let g = relu_backward(&cache.conv2_out, &bn2_grads.input)?;
        let conv2_grads = conv2d_backward(&cache.bn1_out, &self.conv2, &g)?;
        let bn1_grads = batchnorm_backward(&cache.bn1_cache, &self.bn1, &conv2_grads.input)?;
        let g = relu_backward(&cache.conv1_out, &bn1_grads.input)?;
        let conv1_grads = conv2d_backward(&cache.input, &self.conv1, &g)?;
        Ok(ModelGrads {
            conv1_weights: conv1_grads.weights,
            conv1_bias: conv1_grads.bias,
            bn1_gamma: bn1_grads.gamma,
            bn1_beta: bn1_grads.beta,
            conv2_weights: conv2_grads.weights,
            conv2_bias: conv2_grads.bias,
            bn2_gamma: bn2_grads.gamma,
            bn2_beta: bn2_grads.beta,
            fc1_weights: fc1_grads.weights,
            fc1_bias: fc1_grads.bias,
            fc2_weights: fc2_grads.weights,
            fc2_bias: fc2_grads.bias,
        })
    }
}

fn cast_bn<T: Scalar, U: Scalar>(bn: &BatchNormLayer<T>) -> BatchNormLayer<U> {
    BatchNormLayer {
        gamma: bn.gamma.cast(),
        beta: bn.beta.cast(),
        running_mean: bn.running_mean.cast(),
        running_var: bn.running_var.cast(),
        eps: scalar(bn.eps.to_f64().expect("finite")),
        momentum: scalar(bn.momentum.to_f64().expect("finite")),
    }
}

/// Activations saved by the training-mode forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    input: Tensor<T>,
    conv1_out: Tensor<T>,
    bn1_cache: BnCache<T>,
    bn1_out: Tensor<T>,
    conv2_out: Tensor<T>,
    bn2_cache: BnCache<T>,
    flat: Tensor<T>,
    fc1_out: Tensor<T>,
    dropout_mask: DropoutMask<T>,
    fc2_in: Tensor<T>,
}

/// Gradients for the trainable tensors, one field per tensor.
#[derive(Debug, Clone)]
pub struct ModelGrads<T> {
    pub conv1_weights: Tensor<T>,
    pub conv1_bias: Tensor<T>,
    pub bn1_gamma: Tensor<T>,
    pub bn1_beta: Tensor<T>,
    pub conv2_weights: Tensor<T>,
    pub conv2_bias: Tensor<T>,
    pub bn2_gamma: Tensor<T>,
    pub bn2_beta: Tensor<T>,
    pub fc1_weights: Tensor<T>,
    pub fc1_bias: Tensor<T>,
    pub fc2_weights: Tensor<T>,
    pub fc2_bias: Tensor<T>,
}

impl<T: Scalar> ModelGrads<T> {
    /// Same order as [`BcfplModel::trainable`].
    pub fn as_array(&self) -> [&Tensor<T>; TRAINABLE_TENSORS] {
        [
            &self.conv1_weights,
            &self.conv1_bias,
            &self.bn1_gamma,
            &self.bn1_beta,
            &self.conv2_weights,
            &self.conv2_bias,
            &self.bn2_gamma,
            &self.bn2_beta,
            &self.fc1_weights,
            &self.fc1_bias,
            &self.fc2_weights,
            &self.fc2_bias,
        ]
    }
}
