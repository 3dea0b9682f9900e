//! The training loop: AdamW with decoupled weight decay, a step-halving
//! learning-rate schedule, per-epoch logging, and checkpointing.

pub mod checkpoint;

use std::io;
use std::path::PathBuf;

use num_traits::ToPrimitive;
use thiserror::Error;

use crate::dataset::{make_batches, DatasetError, Manifest};
use crate::eval::{accuracy_of, predict_scores, EvalError};
use crate::nn::model::{BcfplModel, TRAINABLE_TENSORS};
use crate::nn::ops::softmax_cross_entropy;
use crate::nn::tensor::{scalar, Scalar, Tensor};
use crate::nn::NnError;
use crate::rng::{derive_seed, domain, rng_from_seed};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Checkpoint(#[from] checkpoint::CheckpointError),
    #[error("training manifest is empty")]
    EmptyTrainingSet,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("could not write {path}")]
    Io { path: PathBuf, source: io::Error },
    #[error("malformed log: {0}")]
    LogFormat(String),
}

/// AdamW hyperparameters. The defaults are the conventional ones.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Full description of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    /// Intermediate side length of the degradation applied to every image.
    pub resolution: usize,
    pub epochs: usize,
    pub batch_size: usize,
    /// Learning rate at epoch 0.
    pub lr0: f64,
    /// When false the learning rate stays at `lr0` for the whole run.
    pub attenuation: bool,
    /// Epochs between halvings of the learning rate.
    pub halve_every: usize,
    pub adamw: AdamWConfig,
    pub dropout_p: f64,
}

impl Default for TrainConfig {
    /// The reference protocol: 20 epochs of AdamW at batch size 128,
    /// starting from 1e-3 and halving every 4 epochs.
    fn default() -> Self {
        Self {
            seed: 0,
            resolution: 7,
            epochs: 20,
            batch_size: 128,
            lr0: 1e-3,
            attenuation: true,
            halve_every: 4,
            adamw: AdamWConfig::default(),
            dropout_p: 0.5,
        }
    }
}

impl TrainConfig {
    /// The overfitting-study preset: a tiny constant learning rate with
    /// attenuation off, evaluated after every epoch; 30 epochs by default.
    pub fn overfit_study() -> Self {
        Self {
            lr0: 2e-5,
            attenuation: false,
            epochs: 30,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |msg: String| Err(TrainError::InvalidConfig(msg));
        if self.epochs == 0 {
            return fail("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch size must be at least 1".into());
        }
        if self.resolution == 0 {
            return fail("resolution must be at least 1".into());
        }
        if self.halve_every == 0 {
            return fail("halve-every must be at least 1".into());
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return fail(format!("learning rate {} must be positive", self.lr0));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout_p));
        }
        let a = &self.adamw;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) {
            return fail(format!("betas ({}, {}) outside [0, 1)", a.beta1, a.beta2));
        }
        // Written so NaN fails both checks.
        let eps_ok = a.eps > 0.0;
        let wd_ok = a.weight_decay >= 0.0;
        if !eps_ok || !wd_ok {
            return fail(format!(
                "eps {} must be positive and weight decay {} non-negative",
                a.eps, a.weight_decay
            ));
        }
        Ok(())
    }
}

/// Learning rate for `epoch` (0-based): `lr0 * 0.5^(epoch / halve_every)`
/// with integer division, constant within each epoch; just `lr0` when
/// attenuation is off.
pub fn lr_at(config: &TrainConfig, epoch: usize) -> f64 {
    if !config.attenuation {
        return config.lr0;
    }
    debug_assert!(config.halve_every >= 1);
    config.lr0 * 0.5f64.powi((epoch / config.halve_every) as i32)
}

/// First and second moment estimates for every trainable tensor, plus the
/// shared step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState<T> {
    pub(crate) m: Vec<Tensor<T>>,
    pub(crate) v: Vec<Tensor<T>>,
    pub(crate) t: u64,
}

impl<T: Scalar> AdamWState<T> {
    pub fn for_model(model: &BcfplModel<T>) -> Self {
        let m = model
            .trainable()
            .iter()
            .map(|p| Tensor::zeros(p.shape()))
            .collect::<Vec<_>>();
        Self {
            v: m.clone(),
            m,
            t: 0,
        }
    }

    /// Number of optimizer steps taken so far.
    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One AdamW update across all trainable tensors.
///
/// Weight decay is decoupled: each parameter is first shrunk by the factor
/// (1 - lr * weight_decay), independently of the gradient, and then moved
/// by the bias-corrected Adam step. With zero gradients the update is a
/// pure multiplicative shrink.
pub fn adamw_step<T: Scalar>(
    params: &mut [&mut Tensor<T>; TRAINABLE_TENSORS],
    grads: &[&Tensor<T>; TRAINABLE_TENSORS],
    state: &mut AdamWState<T>,
    lr: f64,
    config: &AdamWConfig,
) -> Result<(), NnError> {
    for i in 0..TRAINABLE_TENSORS {
        if params[i].shape() != grads[i].shape() || params[i].shape() != state.m[i].shape() {
            return Err(NnError::ShapeMismatch {
                context: "adamw tensors",
                expected: params[i].shape().to_vec(),
                got: grads[i].shape().to_vec(),
            });
        }
    }
    state.t += 1;
    let t = state.t;
    let shrink: T = scalar(1.0 - lr * config.weight_decay);
    let beta1: T = scalar(config.beta1);
    let beta2: T = scalar(config.beta2);
    let one_minus_beta1: T = scalar(1.0 - config.beta1);
    let one_minus_beta2: T = scalar(1.0 - config.beta2);
    let correction1: T = scalar(1.0 - config.beta1.powi(t as i32));
    let correction2: T = scalar(1.0 - config.beta2.powi(t as i32));
    let lr_t: T = scalar(lr);
    let eps: T = scalar(config.eps);
    for i in 0..TRAINABLE_TENSORS {
        let p = params[i].data_mut();
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for j in 0..p.len() {
            p[j] = p[j] * shrink;
            m[j] = beta1 * m[j] + one_minus_beta1 * g[j];
            v[j] = beta2 * v[j] + one_minus_beta2 * g[j] * g[j];
            let m_hat = m[j] / correction1;
            let v_hat = v[j] / correction2;
            p[j] = p[j] - lr_t * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    /// Present when an evaluation manifest was supplied.
    pub test_acc: Option<f64>,
}

/// Runs the full loop: fresh seeded init, per-epoch shuffled batches,
/// cross-entropy loss, one AdamW step per batch at that epoch's learning
/// rate. When `eval_manifest` is given, test accuracy is measured after
/// every epoch. Returns the trained model and one log row per epoch.
pub fn train_run(
    config: &TrainConfig,
    train_manifest: &Manifest,
    eval_manifest: Option<&Manifest>,
) -> Result<(BcfplModel<f32>, Vec<EpochLog>), TrainError> {
    config.validate()?;
    if train_manifest.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    let mut model = BcfplModel::<f32>::init(config.seed);
    model.dropout_p = config.dropout_p;
    let mut state = AdamWState::for_model(&model);
    let mut logs = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let lr = lr_at(config, epoch);
        let mut loss_sum = 0f64;
        let mut correct = 0usize;
        let mut total = 0usize;
        let batches = make_batches(
            train_manifest,
            config.batch_size,
            config.resolution,
            true,
            config.seed,
            epoch as u64,
        )?;
        for (batch_index, batch) in batches.enumerate() {
            let batch = batch?;
            let n = batch.labels.len();
            let mut dropout_rng = rng_from_seed(derive_seed(
                config.seed,
                &[domain::DROPOUT, epoch as u64, batch_index as u64],
            ));
            let (logits, cache) = model.forward_train(&batch.inputs, &mut dropout_rng)?;
            let labels: Vec<usize> = batch.labels.iter().map(|l| l.index()).collect();
            // Prediction rule: occupied wins ties, matching the 0.5
            // threshold on the occupied softmax score.
            for (row, &label) in labels.iter().enumerate() {
                let l0 = logits.data()[row * 2];
                let l1 = logits.data()[row * 2 + 1];
                let predicted = usize::from(l1 >= l0);
                correct += usize::from(predicted == label);
            }
            total += n;
            let (loss, grad_logits) = softmax_cross_entropy(&logits, &labels)?;
            loss_sum += loss.to_f64().unwrap_or(f64::NAN) * n as f64;
            let grads = model.backward(&cache, &grad_logits)?;
            adamw_step(
                &mut model.trainable_mut(),
                &grads.as_array(),
                &mut state,
                lr,
                &config.adamw,
            )?;
        }
        let test_acc = match eval_manifest {
            Some(manifest) => {
                let scored =
                    predict_scores(&model, manifest, config.resolution, config.batch_size)?;
                Some(accuracy_of(&scored, 0.5)?)
            }
            None => None,
        };
        logs.push(EpochLog {
            epoch,
            lr,
            train_loss: loss_sum / total as f64,
            train_acc: correct as f64 / total as f64,
            test_acc,
        });
    }
    Ok((model, logs))
}

/// Serializes logs as `epoch,lr,train_loss,train_acc,test_acc` CSV. Floats
/// use the shortest representation that parses back to the same value, so
/// a write/parse round trip is lossless.
pub fn write_epoch_csv<W: io::Write>(writer: W, logs: &[EpochLog]) -> Result<(), TrainError> {
    let mut w = csv::Writer::from_writer(writer);
    let fail = |e: csv::Error| TrainError::LogFormat(e.to_string());
    w.write_record(["epoch", "lr", "train_loss", "train_acc", "test_acc"])
        .map_err(fail)?;
    for log in logs {
        w.write_record([
            log.epoch.to_string(),
            log.lr.to_string(),
            log.train_loss.to_string(),
            log.train_acc.to_string(),
            log.test_acc.map(|v| v.to_string()).unwrap_or_default(),
        ])
        .map_err(fail)?;
    }
    w.flush().map_err(|e| TrainError::LogFormat(e.to_string()))
}

pub fn write_epoch_csv_path(path: &std::path::Path, logs: &[EpochLog]) -> Result<(), TrainError> {
    let file = std::fs::File::create(path).map_err(|source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    write_epoch_csv(io::BufWriter::new(file), logs)
}

pub fn parse_epoch_csv(text: &str) -> Result<Vec<EpochLog>, TrainError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let mut logs = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| TrainError::LogFormat(e.to_string()))?;
        if record.len() != 5 {
            return Err(TrainError::LogFormat(format!(
                "expected 5 columns, got {}",
                record.len()
            )));
        }
        let field = |i: usize| record[i].trim().to_string();
        let parse_f = |i: usize| -> Result<f64, TrainError> {
            field(i)
                .parse()
                .map_err(|_| TrainError::LogFormat(format!("bad float {:?}", field(i))))
        };
        logs.push(EpochLog {
            epoch: field(0)
                .parse()
                .map_err(|_| TrainError::LogFormat(format!("bad epoch {:?}", field(0))))?,
            lr: parse_f(1)?,
            train_loss: parse_f(2)?,
            train_acc: parse_f(3)?,
            test_acc: if field(4).is_empty() {
                None
            } else {
                Some(parse_f(4)?)
            },
        });
    }
    Ok(logs)
}
