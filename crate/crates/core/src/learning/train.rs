//! Mini-batch training loop with curriculum pair mining.

use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::{binary_target, total_loss, BatchItem, LossBreakdown, LossWeights};
use super::mining::{mine_pairs, scheduled};
use super::optim::{AdamW, AdamWConfig};
use super::similarity::{similarity_matrix, GraphSummary, SimilarityWeights};
use crate::encoder::{EncoderError, EncoderModel, GraphInput};
use crate::graph::UiGraph;
use crate::rng::{hash_words, seeded};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub tau: f64,
    pub lambda_intent: f64,
    pub lambda_recon: f64,
    /// Positive threshold at the first and last epoch.
    pub theta_pos: (f64, f64),
    /// Negative threshold at the first and last epoch.
    pub theta_neg: (f64, f64),
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            epochs: 30,
            lr: 1e-3,
            weight_decay: 1e-4,
            tau: 0.1,
            lambda_intent: 0.5,
            lambda_recon: 0.5,
            theta_pos: (0.8, 0.6),
            theta_neg: (0.3, 0.4),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if !(self.tau > 0.0) {
            return bad("tau must be positive");
        }
        if !(self.lr > 0.0) || self.weight_decay < 0.0 {
            return bad("lr must be positive and weight_decay nonnegative");
        }
        if self.lambda_intent < 0.0 || self.lambda_recon < 0.0 {
            return bad("loss weights must be nonnegative");
        }
        for (neg, pos) in [(self.theta_neg.0, self.theta_pos.0), (self.theta_neg.1, self.theta_pos.1)] {
            if !(0.0 <= neg && neg < pos && pos <= 1.0) {
                return bad("thresholds must satisfy 0 <= theta_neg < theta_pos <= 1");
            }
        }
        Ok(())
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig { lr: self.lr, weight_decay: self.weight_decay, ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("corpus has {corpus} graphs but the batch size is {batch}")]
    CorpusTooSmall { corpus: usize, batch: usize },
    #[error("intent label {0} is out of range")]
    IntentLabel(usize),
    #[error("non-finite parameters after step {0}")]
    Diverged(u64),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
}

/// A graph prepared for training.
#[derive(Debug, Clone)]
pub struct TrainingSample<T> {
    pub input: GraphInput<T>,
    pub target: Array2<T>,
    pub intent: Option<usize>,
    pub summary: GraphSummary,
}

impl<T: Scalar> TrainingSample<T> {
    pub fn new(graph: &UiGraph<T>, intent: Option<usize>) -> Self {
        let input = GraphInput::new(graph);
        let target = binary_target(&input);
        TrainingSample { input, target, intent, summary: GraphSummary::of(graph) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps: u64,
    pub loss: f64,
    pub contrastive: f64,
    pub intent: f64,
    pub reconstruction: f64,
    pub theta_pos: f64,
    pub theta_neg: f64,
    /// Mean positive pairs per batch.
    pub positives: f64,
    pub negatives: f64,
    pub seconds: f64,
}

pub struct TrainOutcome<T> {
    pub model: EncoderModel<T>,
    pub optimizer: AdamW<T>,
    pub log: Vec<EpochLog>,
}

/// Trains `model` on `corpus`. Incomplete trailing batches are dropped; the
/// shuffle of epoch `e` depends only on `(seed, e)`, so a resumed run that
/// starts at the right epoch replays the same order.
pub fn train<T: Scalar>(
    model: EncoderModel<T>,
    corpus: &[TrainingSample<T>],
    cfg: &TrainConfig,
    resume: Option<AdamW<T>>,
) -> Result<TrainOutcome<T>, TrainError> {
    train_with(model, corpus, cfg, resume, |_| {})
}

/// [`train`] with a callback invoked after each epoch.
pub fn train_with<T: Scalar>(
    mut model: EncoderModel<T>,
    corpus: &[TrainingSample<T>],
    cfg: &TrainConfig,
    resume: Option<AdamW<T>>,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome<T>, TrainError> {
    cfg.validate()?;
    if corpus.len() < cfg.batch_size {
        return Err(TrainError::CorpusTooSmall { corpus: corpus.len(), batch: cfg.batch_size });
    }
    let k = model.config.num_intents;
    if let Some(bad) = corpus.iter().filter_map(|s| s.intent).find(|&i| i >= k) {
        return Err(TrainError::IntentLabel(bad));
    }
    let mut opt = match resume {
        Some(mut o) => {
            o.config = cfg.adamw();
            o
        }
        None => AdamW::new(cfg.adamw(), &model.params),
    };
    let steps_per_epoch = (corpus.len() / cfg.batch_size) as u64;
    let first_epoch = (opt.step / steps_per_epoch.max(1)) as usize;
    let weights = LossWeights { tau: cfg.tau, lambda_intent: cfg.lambda_intent, lambda_recon: cfg.lambda_recon };
    let sim_weights = SimilarityWeights::default();

    let mut log = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    for epoch in first_epoch..cfg.epochs {
        let started = Instant::now();
        let theta_pos = scheduled(cfg.theta_pos.0, cfg.theta_pos.1, epoch, cfg.epochs);
        let theta_neg = scheduled(cfg.theta_neg.0, cfg.theta_neg.1, epoch, cfg.epochs);
        order.sort_unstable();
        order.shuffle(&mut seeded(hash_words(&[cfg.seed, epoch as u64])));

        let mut sum = LossBreakdown::default();
        let (mut pos, mut neg) = (0usize, 0usize);
        let mut steps = 0u64;
        for chunk in order.chunks_exact(cfg.batch_size) {
            let summaries: Vec<_> = chunk.iter().map(|&i| corpus[i].summary).collect();
            let labels = mine_pairs(similarity_matrix(&summaries, &sim_weights), theta_pos, theta_neg);
            pos += labels.positives.len();
            neg += labels.negatives.len();
            let batch: Vec<_> = chunk
                .iter()
                .map(|&i| BatchItem { input: &corpus[i].input, target: &corpus[i].target, intent: corpus[i].intent })
                .collect();
            let (parts, grads) = total_loss(&model, &batch, &labels, &weights, Some((cfg.seed, opt.step)))?;
            opt.update(&mut model.params, &grads);
            if !model.params.is_finite() {
                return Err(TrainError::Diverged(opt.step));
            }
            sum.total += parts.total;
            sum.contrastive += parts.contrastive;
            sum.intent += parts.intent;
            sum.reconstruction += parts.reconstruction;
            steps += 1;
        }
        let s = steps as f64;
        let entry = EpochLog {
            epoch,
            steps,
            loss: sum.total / s,
            contrastive: sum.contrastive / s,
            intent: sum.intent / s,
            reconstruction: sum.reconstruction / s,
            theta_pos,
            theta_neg,
            positives: pos as f64 / s,
            negatives: neg as f64 / s,
            seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(TrainOutcome { model, optimizer: opt, log })
}
