//! The epoch loop.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::metrics::{binarize, jaccard, DEFAULT_THRESHOLD};
use crate::model::{Network, ParamStore};
use crate::nn::Mode;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::train::adam::{adam_step, AdamConfig, AdamState};

pub const DEFAULT_EPOCHS: usize = 150;
pub const DEFAULT_BATCH_SIZE: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            adam: AdamConfig::default(),
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        self.adam.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_jaccard: f64,
}

impl EpochRecord {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,val_loss,val_jaccard";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.9},{:.9},{:.9}",
            self.epoch, self.train_loss, self.val_loss, self.val_jaccard
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_jaccard: f64,
}

impl RunReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", EpochRecord::CSV_HEADER)?;
        for r in &self.history {
            writeln!(w, "{}", r.csv_row())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub report: RunReport,
    /// Weights and running statistics as of the best epoch.
    pub best_params: ParamStore<T>,
}

/// Mean loss and mean per-image Jaccard of a split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub loss: f64,
    pub jaccard: f64,
}

fn stack_batch<T: Scalar>(samples: &[&Sample<T>]) -> Result<(Tensor<T>, Tensor<T>)> {
    let images: Vec<&Tensor<T>> = samples.iter().map(|s| &s.image).collect();
    let masks: Vec<Tensor<T>> = samples.iter().map(|s| s.mask.to_tensor()).collect();
    let mask_refs: Vec<&Tensor<T>> = masks.iter().collect();
    Ok((Tensor::stack(&images)?, Tensor::stack(&mask_refs)?))
}

/// Inference-mode evaluation in chunks of `batch_size`.
pub fn evaluate<T: Scalar>(net: &mut Network<T>, samples: &[Sample<T>], batch_size: usize) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::InvalidBatch("cannot evaluate an empty split".into()));
    }
    let threshold = T::from_f64_lossy(DEFAULT_THRESHOLD);
    let (mut loss, mut jac) = (0.0, 0.0);
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample<T>> = chunk.iter().collect();
        let (x, y) = stack_batch(&refs)?;
        let mut tape = Tape::new();
        let xn = tape.constant(x)?;
        let rec = net.record(&mut tape, xn, Mode::Inference, false)?;
        let l = tape.binary_cross_entropy(rec.output, &y)?;
        loss += tape.value(l).data()[0].to_f64_lossy() * chunk.len() as f64;
        for (pred, s) in tape.value(rec.output).unstack().iter().zip(chunk) {
            jac += jaccard(&binarize(pred, threshold)?, &s.mask)?;
        }
    }
    let n = samples.len() as f64;
    Ok(Evaluation {
        loss: loss / n,
        jaccard: jac / n,
    })
}

fn train_batch<T: Scalar>(
    net: &mut Network<T>,
    batch: &[&Sample<T>],
    state: &mut AdamState<T>,
    adam: &AdamConfig,
) -> Result<f64> {
    let (x, y) = stack_batch(batch)?;
    let mut tape = Tape::new();
    let xn = tape.constant(x)?;
    let rec = net.record(&mut tape, xn, Mode::Training, true)?;
    let loss = tape.binary_cross_entropy(rec.output, &y)?;
    let grads = tape.backward(loss)?;
    let g = rec.param_grads(&grads)?;
    let mut params: Vec<&mut Tensor<T>> = net.params.trainable_mut().collect();
    adam_step(&mut params, &g, state, adam)?;
    Ok(tape.value(loss).data()[0].to_f64_lossy())
}

/// Trains with the default no-op observer.
pub fn train<T: Scalar>(
    net: &mut Network<T>,
    train_set: &[Sample<T>],
    val_set: &[Sample<T>],
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    train_with(net, train_set, val_set, cfg, |_| Ok(()))
}

/// Trains for `cfg.epochs`, calling `observer` after each epoch.
///
/// Any non-finite value aborts with [`Error::TrainingAborted`].
pub fn train_with<T: Scalar>(
    net: &mut Network<T>,
    train_set: &[Sample<T>],
    val_set: &[Sample<T>],
    cfg: &TrainConfig,
    mut observer: impl FnMut(&EpochRecord) -> Result<()>,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::InvalidBatch("training and validation splits must be non-empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = AdamState::new(net.params.trainable().iter().map(|p| &p.tensor));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, ParamStore<T>)> = None;

    for epoch in 1..=cfg.epochs {
        let abort = |e: Error| {
            if e.is_numeric() {
                Error::TrainingAborted {
                    epoch,
                    source: Box::new(e),
                }
            } else {
                e
            }
        };
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample<T>> = chunk.iter().map(|&i| &train_set[i]).collect();
            total += train_batch(net, &batch, &mut state, &cfg.adam).map_err(abort)? * chunk.len() as f64;
        }
        let eval = evaluate(net, val_set, cfg.batch_size).map_err(abort)?;
        let record = EpochRecord {
            epoch,
            train_loss: total / train_set.len() as f64,
            val_loss: eval.loss,
            val_jaccard: eval.jaccard,
        };
        observer(&record)?;
        history.push(record);
        if best.as_ref().map_or(true, |b| eval.jaccard > b.1) {
            best = Some((epoch, eval.jaccard, net.params.clone()));
        }
    }
    let (best_epoch, best_val_jaccard, best_params) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        report: RunReport {
            history,
            best_epoch,
            best_val_jaccard,
        },
        best_params,
    })
}
