use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{hit_rate, ndcg, rank_all};
use super::optim::{clip_global_norm, lr_schedule, Adam};
use crate::data::{BatchContext, Dataset, Interaction, SplitDataset};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::{Scalar, Tape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Fraction of all steps spent in linear warmup.
    pub warmup: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm ceiling.
    pub clip_norm: f64,
    pub eval_batch_size: usize,
    /// Validate every this many epochs (and after the last one).
    pub eval_every: usize,
    /// Stop after this many validations without improvement.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            epochs: 200,
            batch_size: 128,
            warmup: 0.05,
            seed: 42,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 5.0,
            eval_batch_size: 256,
            eval_every: 1,
            patience: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.warmup) {
            return Err(Error::Config(format!("warmup {} not in [0, 1)", self.warmup)));
        }
        if self.batch_size == 0 || self.eval_batch_size == 0 || self.eval_every == 0 {
            return Err(Error::Config("batch sizes and eval_every must be positive".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, sequences: usize) -> usize {
        sequences.div_ceil(self.batch_size)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
    pub validation_hr10: Option<f64>,
    pub validation_ndcg10: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T: Scalar> {
    /// Parameters of the best validation epoch.
    pub best: Model<T>,
    pub best_epoch: usize,
    pub best_hr10: f64,
    /// Optimizer state after the final step.
    pub optimizer: Adam<T>,
    pub history: Vec<EpochLog>,
    pub steps: usize,
}

/// Cloze training with per-epoch validation; keeps the checkpoint with the
/// highest validation HR@10 (ties go to the higher NDCG@10). `on_epoch` sees every epoch log as it is made.
pub fn train<T: Scalar>(
    mut model: Model<T>,
    dataset: &Dataset,
    split: &SplitDataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let ctx = BatchContext::new(&dataset.schema, &dataset.catalog, model.config.max_len)?;
    let seqs: Vec<&[Interaction]> = split
        .train
        .iter()
        .map(|s| &s.interactions[..])
        .filter(|s| !s.is_empty())
        .collect();
    if seqs.is_empty() {
        return Err(Error::Config("no training sequences".into()));
    }
    let per_epoch = cfg.steps_per_epoch(seqs.len());
    let total = per_epoch * cfg.epochs;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(&model.params, cfg.beta1, cfg.beta2, cfg.eps);
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best = (model.clone(), 0, f64::NEG_INFINITY);
    let mut best_ndcg = f64::NEG_INFINITY;
    let mut stale = 0;
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut lr = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let rows: Vec<&[Interaction]> = chunk.iter().map(|&i| seqs[i]).collect();
            let batch = ctx.masked_batch(&rows, model.config.mask_prob, &mut rng)?;
            let mut tape = Tape::new();
            let bound = model.params.bind(&mut tape, true);
            let loss = model.loss(&mut tape, &bound, &batch, Some(&mut rng))?;
            let lv = tape.value(loss).data()[0].as_f64();
            if !lv.is_finite() {
                return Err(Error::NonFinite(format!("loss {lv} at epoch {epoch}, step {step}")));
            }
            tape.backward(loss)?;
            let mut grads = bound.grads(&tape);
            clip_global_norm(&mut grads, cfg.clip_norm);
            lr = lr_schedule(step, total, cfg.lr, cfg.warmup);
            adam.update(&mut model.params, &grads, lr)?;
            loss_sum += lv;
            step += 1;
        }
        let validate = epoch % cfg.eval_every == 0 || epoch == cfg.epochs;
        let (validation_hr10, validation_ndcg10) = if validate && !split.validation.is_empty() {
            let ranks = rank_all(&model, dataset, &split.validation, cfg.eval_batch_size)?;
            (Some(hit_rate(&ranks, 10)), Some(ndcg(&ranks, 10)))
        } else {
            (None, None)
        };
        let log = EpochLog {
            epoch,
            mean_loss: loss_sum / per_epoch as f64,
            lr,
            validation_hr10,
            validation_ndcg10,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: loss {:.4} lr {:.2e} val HR@10 {:?}",
            log.mean_loss,
            lr,
            validation_hr10
        );
        on_epoch(&log);
        history.push(log);
        if let (Some(hr), Some(nd)) = (validation_hr10, validation_ndcg10) {
            // HR@10 decides; NDCG@10 breaks ties once HR@10 saturates
            if (hr, nd) > (best.2, best_ndcg) {
                best = (model.clone(), epoch, hr);
                best_ndcg = nd;
                stale = 0;
            } else {
                stale += 1;
                if cfg.patience.is_some_and(|p| stale >= p) {
                    log::info!("no improvement for {stale} validations, stopping");
                    break;
                }
            }
        }
    }
    if best.1 == 0 {
        let last = history.last().map_or(0, |l| l.epoch);
        best = (model, last, f64::NAN);
    }
    Ok(TrainOutcome {
        best: best.0,
        best_epoch: best.1,
        best_hr10: best.2,
        optimizer: adam,
        history,
        steps: step,
    })
}
