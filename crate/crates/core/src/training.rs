//! Loss, optimizers, the epoch loop and early stopping.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::data::{Batch, EncodedRecord};
use crate::error::{LerpError, Result};
use crate::metrics::PredictionSet;
use crate::model::Model;
use crate::tensor::Tensor;

/// Mean binary cross-entropy of one record's predictions.
pub fn bce_loss(tape: &mut Tape, y_hat: Var, targets: &[f64]) -> Result<Var> {
    tape.bce(y_hat, targets)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = LerpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(LerpError::Config(format!("unknown optimizer {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation-loss improvement before stopping.
    pub patience: usize,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 16,
            max_epochs: 100,
            patience: 5,
            seed: 0,
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(LerpError::Config(format!(
                "learning rate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(LerpError::Config("batch size must be >= 1".into()));
        }
        if self.patience == 0 {
            return Err(LerpError::Config("patience must be >= 1".into()));
        }
        Ok(())
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Optimizer moments, aligned with [`Model::parameters`].
#[derive(Clone, Debug, PartialEq)]
pub enum OptimizerState {
    Sgd,
    Adam {
        step: u64,
        first: Vec<Tensor>,
        second: Vec<Tensor>,
    },
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, model: &Model) -> Self {
        match kind {
            OptimizerKind::Sgd => OptimizerState::Sgd,
            OptimizerKind::Adam => {
                let zeros: Vec<Tensor> = model
                    .parameters()
                    .iter()
                    .map(|(_, t)| Tensor::zeros(t.shape()))
                    .collect();
                OptimizerState::Adam {
                    step: 0,
                    first: zeros.clone(),
                    second: zeros,
                }
            }
        }
    }

    /// Applies one update with `grads` aligned to `model.parameters()`.
    pub fn step(&mut self, model: &mut Model, grads: &[Tensor], lr: f64) {
        let params = model.parameters_mut();
        assert_eq!(params.len(), grads.len(), "gradient count mismatch");
        match self {
            OptimizerState::Sgd => {
                for ((_, p), g) in params.into_iter().zip(grads) {
                    for (w, &d) in p.data_mut().iter_mut().zip(g.data()) {
                        *w -= lr * d;
                    }
                }
            }
            OptimizerState::Adam {
                step,
                first,
                second,
            } => {
                *step += 1;
                let c1 = 1.0 - ADAM_BETA1.powi(*step as i32);
                let c2 = 1.0 - ADAM_BETA2.powi(*step as i32);
                for (((_, p), g), (m, v)) in params
                    .into_iter()
                    .zip(grads)
                    .zip(first.iter_mut().zip(second.iter_mut()))
                {
                    let (w, m, v) = (p.data_mut(), m.data_mut(), v.data_mut());
                    for i in 0..w.len() {
                        let d = g.data()[i];
                        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * d;
                        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * d * d;
                        let m_hat = m[i] / c1;
                        let v_hat = v[i] / c2;
                        w[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                    }
                }
            }
        }
    }
}

/// Everything needed to resume training exactly.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub model: Model,
    pub optimizer: OptimizerState,
    /// Completed epochs.
    pub epoch: usize,
    pub best_val_loss: f64,
    pub rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(model: Model, config: &TrainConfig) -> Self {
        let optimizer = OptimizerState::new(config.optimizer, &model);
        TrainState {
            model,
            optimizer,
            epoch: 0,
            best_val_loss: f64::INFINITY,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
        }
    }
}

/// Mean loss and mean gradients over `records`. Per-record work runs in
/// parallel; the reduction is sequential in record order.
pub fn batch_loss_and_grads(
    model: &Model,
    records: &[EncodedRecord],
) -> Result<(f64, Vec<Tensor>)> {
    if records.is_empty() {
        return Err(LerpError::Data("empty batch".into()));
    }
    let per: Vec<(f64, Vec<Tensor>)> = records
        .par_iter()
        .map(|r| model.loss_and_grads(r))
        .collect::<Result<_>>()?;
    let inv = 1.0 / records.len() as f64;
    let mut iter = per.into_iter();
    let (mut loss, mut grads) = iter.next().expect("non-empty");
    for (l, g) in iter {
        loss += l;
        for (acc, gi) in grads.iter_mut().zip(&g) {
            acc.add_assign(gi);
        }
    }
    for g in &mut grads {
        g.scale_in_place(inv);
    }
    Ok((loss * inv, grads))
}

/// One pass over `train` in a freshly shuffled order. Returns the mean
/// per-record loss measured before each batch's update.
pub fn train_epoch(
    state: &mut TrainState,
    train: &[EncodedRecord],
    config: &TrainConfig,
) -> Result<f64> {
    config.validate()?;
    if train.is_empty() {
        return Err(LerpError::Data("no training records".into()));
    }
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut state.rng);
    let mut total = 0.0;
    for (b, chunk) in order.chunks(config.batch_size).enumerate() {
        let refs: Vec<&EncodedRecord> = chunk.iter().map(|&i| &train[i]).collect();
        let batch = Batch::new(&refs, state.model.config.max_note_len);
        let rows: Vec<EncodedRecord> = (0..batch.len()).map(|i| batch.record(i)).collect();
        let (loss, grads) = batch_loss_and_grads(&state.model, &rows)?;
        if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(LerpError::Numeric(format!(
                "non-finite loss or gradient in epoch {} batch {b} (records {})",
                state.epoch + 1,
                batch.ids.join(",")
            )));
        }
        state
            .optimizer
            .step(&mut state.model, &grads, config.learning_rate);
        total += loss * rows.len() as f64;
    }
    state.epoch += 1;
    Ok(total / train.len() as f64)
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub loss: f64,
    pub predictions: PredictionSet,
}

/// Mean loss and predicted probabilities over `records`.
pub fn evaluate(model: &Model, records: &[EncodedRecord]) -> Result<Evaluation> {
    if records.is_empty() {
        return Err(LerpError::Data("no records to evaluate".into()));
    }
    let outs: Vec<(f64, Vec<f64>)> = records
        .par_iter()
        .map(|r| {
            let mut tape = Tape::new();
            let g = model.build_graph(&mut tape, r)?;
            let loss = bce_loss(&mut tape, g.y_hat, &r.labels)?;
            Ok((
                tape.value(loss).data()[0],
                tape.value(g.y_hat).data().to_vec(),
            ))
        })
        .collect::<Result<_>>()?;
    let loss = outs.iter().map(|(l, _)| l).sum::<f64>() / records.len() as f64;
    let scores = outs.into_iter().map(|(_, s)| s).collect();
    let targets = records
        .iter()
        .map(|r| r.labels.iter().map(|&y| y as u8).collect())
        .collect();
    Ok(Evaluation {
        loss,
        predictions: PredictionSet::new(scores, targets)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopSignal {
    Improved,
    Continue,
    Stop,
}

/// Tracks the best validation loss and counts epochs without improvement.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    bad_epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            bad_epochs: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> StopSignal {
        if val_loss < self.best {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.bad_epochs = 0;
            StopSignal::Improved
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.patience {
                StopSignal::Stop
            } else {
                StopSignal::Continue
            }
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_micro_auc: Option<f64>,
}

impl EpochLog {
    /// `epoch, train_loss, val_loss, val_micro_auc`
    pub fn line(&self) -> String {
        let auc = self
            .val_micro_auc
            .map_or_else(|| "nan".to_string(), |a| format!("{a:.6}"));
        format!(
            "{}, {:.6}, {:.6}, {}",
            self.epoch, self.train_loss, self.val_loss, auc
        )
    }
}

#[derive(Clone, Debug)]
pub struct FitResult {
    /// Parameters from the epoch with the lowest validation loss (the
    /// initial model when no epoch ran).
    pub best: Model,
    /// 0 when no epoch ran.
    pub best_epoch: usize,
    pub history: Vec<EpochLog>,
    pub stopped_early: bool,
}

/// Trains `model` with early stopping on validation loss.
pub fn fit(
    config: &TrainConfig,
    model: Model,
    train: &[EncodedRecord],
    validation: &[EncodedRecord],
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<FitResult> {
    config.validate()?;
    if validation.is_empty() {
        return Err(LerpError::Data("validation set is empty".into()));
    }
    let mut state = TrainState::new(model, config);
    let mut best = state.model.clone();
    let mut stopper = EarlyStopping::new(config.patience);
    let mut history = Vec::new();
    let mut stopped_early = false;
    for _ in 0..config.max_epochs {
        let train_loss = train_epoch(&mut state, train, config)?;
        let eval = evaluate(&state.model, validation)?;
        let val_micro_auc = crate::metrics::report(&eval.predictions)?.micro_roc_auc;
        let log = EpochLog {
            epoch: state.epoch,
            train_loss,
            val_loss: eval.loss,
            val_micro_auc,
        };
        on_epoch(&log);
        history.push(log);
        match stopper.observe(state.epoch, eval.loss) {
            StopSignal::Improved => {
                best = state.model.clone();
                state.best_val_loss = eval.loss;
            }
            StopSignal::Continue => {}
            StopSignal::Stop => {
                stopped_early = true;
                break;
            }
        }
    }
    Ok(FitResult {
        best,
        best_epoch: stopper.best_epoch(),
        history,
        stopped_early,
    })
}
