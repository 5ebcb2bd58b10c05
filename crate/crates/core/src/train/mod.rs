//! Reverse-mode gradients for the fixed toy architecture, a finite-difference
//! gradient checker, and a deterministic mini-batch trainer.
//!
//! Training always runs at `β = 1`; temperature scaling is applied only
//! after training.

mod backward;
mod gradcheck;

pub use backward::{backward, BackwardOutput, Gradients};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport, Offender, Stencil};

use std::sync::atomic::{AtomicU64, Ordering};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics;
pub use crate::model::LabeledSequence;
use crate::model::{ModelConfig, ModelError, ModelWeights};

/// Probability floor used by [`cross_entropy`].
pub const PROB_FLOOR: f64 = 1e-12;

static CLAMPED: AtomicU64 = AtomicU64::new(0);

/// Number of times [`cross_entropy`] has clamped a zero probability since
/// process start.
pub fn clamped_loss_count() -> u64 {
    CLAMPED.load(Ordering::Relaxed)
}

/// `−ln p(gold)` in nats, with `p` floored at [`PROB_FLOOR`].
pub fn cross_entropy(probs: &[f64], gold: u8) -> f64 {
    let mut p = probs[gold as usize];
    if p < PROB_FLOOR {
        CLAMPED.fetch_add(1, Ordering::Relaxed);
        p = PROB_FLOOR;
    }
    0.0 - p.ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    PlainGradientDescent,
    AdaptiveMoment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    /// Drives the per-epoch shuffle.
    pub seed: u64,
    pub init_std: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 12,
            batch_size: 32,
            learning_rate: 3e-3,
            optimizer: Optimizer::AdaptiveMoment,
            seed: 0,
            init_std: 0.02,
        }
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid train config: {0}")]
    InvalidConfig(String),
    #[error("empty training corpus")]
    EmptyCorpus,
    #[error("training diverged in epoch {epoch} (non-finite loss or gradient)")]
    Diverged { epoch: usize, checkpoint: Box<ModelWeights> },
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        // zero is accepted so that a no-op run can be expressed
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return bad("learning_rate must be finite and non-negative");
        }
        if !self.init_std.is_finite() || self.init_std <= 0.0 {
            return bad("init_std must be positive");
        }
        Ok(())
    }
}

/// One line of the epoch log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    /// AUC of the scores seen during the epoch (before each batch's update);
    /// `None` when the corpus holds a single class.
    pub train_auc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct FitOutput {
    pub weights: ModelWeights,
    pub log: Vec<EpochRecord>,
}

struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: i32,
}

/// Trains a freshly initialised model. Deterministic in
/// `(corpus, config, init_seed)` for any rayon thread count: per-example
/// gradients are computed in parallel and reduced in example order.
pub fn fit<E: LabeledSequence>(
    corpus: &[E],
    model_config: ModelConfig,
    config: &TrainConfig,
    init_seed: u64,
) -> Result<FitOutput, TrainError> {
    let weights = ModelWeights::init(model_config, init_seed, config.init_std)?;
    fit_from(corpus, weights, config)
}

/// Continues training from `weights`.
pub fn fit_from<E: LabeledSequence>(
    corpus: &[E],
    mut weights: ModelWeights,
    config: &TrainConfig,
) -> Result<FitOutput, TrainError> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = AdamState {
        m: weights.tensors().iter().map(|(_, t)| vec![0.0; t.data().len()]).collect(),
        v: weights.tensors().iter().map(|(_, t)| vec![0.0; t.data().len()]).collect(),
        step: 0,
    };
    let mut checkpoint = weights.clone();
    let mut log = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut scores = vec![0.0; corpus.len()];
        for batch in order.chunks(config.batch_size) {
            let outs: Vec<BackwardOutput> = batch
                .par_iter()
                .map(|&i| backward(corpus[i].tokens(), corpus[i].label(), &weights))
                .collect::<Result<_, _>>()?;
            let mut grad = Gradients::zeros_like(&weights);
            for (&i, out) in batch.iter().zip(&outs) {
                loss_sum += out.loss;
                scores[i] = out.prob_positive;
                grad.accumulate(&out.gradients);
            }
            grad.scale(1.0 / batch.len() as f64);
            if !loss_sum.is_finite() || !grad.is_finite() {
                return Err(TrainError::Diverged { epoch, checkpoint: Box::new(checkpoint) });
            }
            apply_update(&mut weights, &grad, config, &mut adam);
            if !weights.is_finite() {
                return Err(TrainError::Diverged { epoch, checkpoint: Box::new(checkpoint) });
            }
        }
        let labels: Vec<u8> = corpus.iter().map(|e| e.label()).collect();
        let train_auc = metrics::auc_from_scores(&scores, &labels).ok();
        log.push(EpochRecord { epoch, mean_loss: loss_sum / corpus.len() as f64, train_auc });
        checkpoint = weights.clone();
    }
    Ok(FitOutput { weights, log })
}

fn apply_update(weights: &mut ModelWeights, grad: &Gradients, config: &TrainConfig, adam: &mut AdamState) {
    let lr = config.learning_rate;
    match config.optimizer {
        Optimizer::PlainGradientDescent => {
            for ((_, w), (_, g)) in weights.tensors_mut().into_iter().zip(grad.tensors()) {
                for (wv, gv) in w.data_mut().iter_mut().zip(g.data()) {
                    *wv -= lr * gv;
                }
            }
        }
        Optimizer::AdaptiveMoment => {
            adam.step += 1;
            let c1 = 1.0 - ADAM_BETA1.powi(adam.step);
            let c2 = 1.0 - ADAM_BETA2.powi(adam.step);
            for (((_, w), (_, g)), (m, v)) in weights
                .tensors_mut()
                .into_iter()
                .zip(grad.tensors())
                .zip(adam.m.iter_mut().zip(adam.v.iter_mut()))
            {
                for (((wv, &gv), mv), vv) in
                    w.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut())
                {
                    *mv = ADAM_BETA1 * *mv + (1.0 - ADAM_BETA1) * gv;
                    *vv = ADAM_BETA2 * *vv + (1.0 - ADAM_BETA2) * gv * gv;
                    let m_hat = *mv / c1;
                    let v_hat = *vv / c2;
                    *wv -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                }
            }
        }
    }
}

/// Mean loss of `weights` over `corpus` at `β = 1`.
pub fn mean_loss<E: LabeledSequence>(corpus: &[E], weights: &ModelWeights) -> Result<f64, ModelError> {
    let losses: Vec<f64> = corpus
        .par_iter()
        .map(|e| {
            crate::model::forward(e.tokens(), weights, crate::model::Temperature::UNIT, false)
                .map(|o| cross_entropy(&o.probs, e.label()))
        })
        .collect::<Result<_, _>>()?;
    Ok(losses.iter().sum::<f64>() / corpus.len() as f64)
}
