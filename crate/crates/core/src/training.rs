//! Presence-only maximum-likelihood training with uniform spherical negatives.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::ObservationRecord;
use crate::encoders::EncoderSpec;
use crate::error::{Error, Result};
use crate::geometry::{sample_uniform_sphere, SphericalPoint};
use crate::nnet::{
    self, encode_matrix, init_params, param_slices, param_slices_mut, Arch, Batch, Checkpoint,
    ClassEmbeddings, LocationModel, MlpParams,
};

/// Weight of the positive term and the number of uniform negatives per positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub beta: f64,
    pub negatives_per_positive: usize,
}

impl LossConfig {
    /// `beta = c`, one negative per positive.
    pub fn for_classes(num_classes: usize) -> Self {
        Self {
            beta: num_classes as f64,
            negatives_per_positive: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidConfig(format!("beta must be positive, got {}", self.beta)));
        }
        if self.negatives_per_positive == 0 {
            return Err(Error::InvalidConfig("negatives_per_positive must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 30,
            batch_size: 512,
            seed: 0,
            optimizer: Optimizer::Adam,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Batch-mean negated log-likelihood of the presence-only objective.
pub fn presence_loss(
    params: &MlpParams,
    classes: &ClassEmbeddings,
    batch: &Batch,
    loss_cfg: &LossConfig,
) -> Result<f64> {
    nnet::loss_value(params, classes, batch, loss_cfg)
}

const STREAM_SHUFFLE: u64 = 1;
const STREAM_NEGATIVES: u64 = 2;

/// Random stream for one `(purpose, epoch, batch)` cell, independent of every other cell.
fn derived_rng(seed: u64, purpose: u64, epoch: usize, batch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((purpose << 56) ^ ((epoch as u64) << 28) ^ batch as u64);
    rng
}

/// Random source for the negatives of batch `batch` in epoch `epoch`.
pub fn negative_rng(seed: u64, epoch: usize, batch: usize) -> ChaCha8Rng {
    derived_rng(seed, STREAM_NEGATIVES, epoch, batch)
}

/// One list of `negatives_per_positive` uniform points for each of `batch_size` positives.
pub fn sample_negatives<R: Rng + ?Sized>(
    rng: &mut R,
    batch_size: usize,
    negatives_per_positive: usize,
) -> Vec<Vec<SphericalPoint>> {
    (0..batch_size)
        .map(|_| sample_uniform_sphere(rng, negatives_per_positive))
        .collect()
}

/// Bias-corrected Adam moments for a list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl AdamState {
    pub fn new(shapes: &[usize], beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
            beta1,
            beta2,
            eps,
        }
    }

    /// Standard moments `0.9`, `0.999`, `1e-8`.
    pub fn with_defaults(shapes: &[usize]) -> Self {
        Self::new(shapes, 0.9, 0.999, 1e-8)
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) {
        assert_eq!(params.len(), self.m.len(), "tensor count changed");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// One Adam update of the network and class embeddings.
pub fn adam_step(
    state: &mut AdamState,
    params: &mut MlpParams,
    classes: &mut ClassEmbeddings,
    grads: &MlpParams,
    grad_classes: &ClassEmbeddings,
    lr: f64,
) {
    let g = param_slices(grads, grad_classes);
    let mut p = param_slices_mut(params, classes);
    state.step(&mut p, &g, lr);
}

fn sgd_step(
    params: &mut MlpParams,
    classes: &mut ClassEmbeddings,
    grads: &MlpParams,
    grad_classes: &ClassEmbeddings,
    lr: f64,
) {
    let g = param_slices(grads, grad_classes);
    for (p, g) in param_slices_mut(params, classes).into_iter().zip(g) {
        for (x, dx) in p.iter_mut().zip(g) {
            *x -= lr * dx;
        }
    }
}

/// Trains a location model on presence-only observations.
///
/// Parameters come from stream 0 of `train_cfg.seed`; each epoch reshuffles
/// with its own stream and every batch draws fresh negatives from
/// [`negative_rng`], so a run is fully reproducible from the config.
pub fn train(
    dataset: &[ObservationRecord],
    num_classes: usize,
    encoder: &EncoderSpec,
    arch: Arch,
    loss_cfg: &LossConfig,
    train_cfg: &TrainConfig,
) -> Result<Checkpoint> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if arch.c != num_classes {
        return Err(Error::InvalidConfig(format!(
            "arch declares {} classes, dataset has {num_classes}",
            arch.c
        )));
    }
    if let Some((row, rec)) = dataset
        .iter()
        .enumerate()
        .find(|(_, r)| r.class_id >= num_classes)
    {
        return Err(Error::ClassIdOutOfRange {
            class_id: rec.class_id,
            num_classes,
            row: Some(row + 1),
        });
    }
    loss_cfg.validate()?;
    train_cfg.validate()?;

    let seed = train_cfg.seed;
    let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut params, mut classes) =
        init_params(encoder.output_dim(), arch.h, arch.k, arch.d, arch.c, &mut init_rng)?;

    let points: Vec<SphericalPoint> = dataset.iter().map(|r| r.point).collect();
    let encoded = encode_matrix(encoder, &points);
    let width = encoded.ncols();

    let shapes: Vec<usize> = param_slices(&params, &classes).iter().map(|s| s.len()).collect();
    let mut adam = AdamState::new(
        &shapes,
        train_cfg.adam_beta1,
        train_cfg.adam_beta2,
        train_cfg.adam_epsilon,
    );

    let n = dataset.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(train_cfg.epochs);
    for epoch in 0..train_cfg.epochs {
        order.shuffle(&mut derived_rng(seed, STREAM_SHUFFLE, epoch, 0));
        let mut epoch_loss = 0.0;
        for (b, chunk) in order.chunks(train_cfg.batch_size).enumerate() {
            let mut positives = Array2::zeros((chunk.len(), width));
            for (row, &i) in chunk.iter().enumerate() {
                positives.row_mut(row).assign(&encoded.row(i));
            }
            let batch_classes = chunk.iter().map(|&i| dataset[i].class_id).collect();
            let negative_points: Vec<SphericalPoint> = sample_negatives(
                &mut negative_rng(seed, epoch, b),
                chunk.len(),
                loss_cfg.negatives_per_positive,
            )
            .into_iter()
            .flatten()
            .collect();
            let negatives = encode_matrix(encoder, &negative_points);
            let batch = Batch::new(positives, batch_classes, negatives)?;

            let (grads, grad_classes, loss) = nnet::gradients(&params, &classes, &batch, loss_cfg)?;
            match train_cfg.optimizer {
                Optimizer::Adam => adam_step(
                    &mut adam,
                    &mut params,
                    &mut classes,
                    &grads,
                    &grad_classes,
                    train_cfg.learning_rate,
                ),
                Optimizer::Sgd => sgd_step(
                    &mut params,
                    &mut classes,
                    &grads,
                    &grad_classes,
                    train_cfg.learning_rate,
                ),
            }
            epoch_loss += loss * chunk.len() as f64;
        }
        history.push(epoch_loss / n as f64);
    }

    let model = LocationModel::new(encoder.clone(), params, classes)?;
    let mut checkpoint = Checkpoint::from_model(&model, seed);
    checkpoint.loss_history = history;
    checkpoint.loss_config = Some(*loss_cfg);
    checkpoint.train_config = Some(train_cfg.clone());
    Ok(checkpoint)
}
