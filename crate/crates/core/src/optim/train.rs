//! Epoch loop: batches, Adam updates, validation, checkpoints and history.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::data::{plan_epoch, ClipConfig, ClipSet, Order, Prefetcher};
use crate::error::{Error, Result};
use crate::layers::cross_entropy;
use crate::model::{checkpoint, Model, TrainingMeta};
use crate::optim::{adam_step, AdamConfig, AdamState, LrSchedule};
use crate::rng::{stream, Stream};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub adam: AdamConfig,
    pub seed: u64,
    pub clip: ClipConfig,
    /// Batches assembled ahead of the optimizer.
    pub prefetch: usize,
    /// Where `history.csv` and `checkpoint-epoch-NN.bin` go; nothing is
    /// written when unset.
    pub out_dir: Option<PathBuf>,
}

impl TrainConfig {
    pub fn new(epochs: usize, schedule: LrSchedule, seed: u64) -> Self {
        TrainConfig {
            epochs,
            batch_size: 12,
            schedule,
            adam: AdamConfig::default(),
            seed,
            clip: ClipConfig::default(),
            prefetch: 2,
            out_dir: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: usize,
    /// Rate used for the epoch's first iteration.
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// `(epoch, iteration, lr)` for every optimizer step.
    pub lr_trace: Vec<(usize, usize, f64)>,
}

pub const HISTORY_HEADER: &str = "epoch,phase,lr,train_loss,train_acc,val_loss,val_acc";

impl History {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{HISTORY_HEADER}\n");
        for r in &self.epochs {
            writeln!(
                out,
                "{},{},{:e},{},{},{},{}",
                r.epoch, r.phase, r.lr, r.train_loss, r.train_acc, r.val_loss, r.val_acc
            )
            .expect("writing to a String");
        }
        out
    }
}

pub fn checkpoint_name(epoch: usize) -> String {
    format!("checkpoint-epoch-{epoch:02}.bin")
}

/// Mean loss and accuracy of an infer-mode pass with midpoint clip starts.
pub fn validate(model: &Model<f32>, set: &ClipSet, clip: &ClipConfig, batch_size: usize) -> Result<(f64, f64)> {
    if set.is_empty() {
        return Err(Error::invalid("validation set is empty"));
    }
    let plans = plan_epoch(set, batch_size, Order::Eval)?;
    let (mut loss, mut correct) = (0.0, 0usize);
    for plan in &plans {
        let batch = crate::data::make_batch(set.source.as_ref(), plan, clip)?;
        let probs = model.infer(&batch.input)?;
        let (l, _) = cross_entropy(&probs, &batch.labels)?;
        loss += l * batch.labels.len() as f64;
        correct += count_correct(&probs, &batch.labels)?;
    }
    Ok((loss / set.len() as f64, correct as f64 / set.len() as f64))
}

fn count_correct(probs: &Tensor<f32>, labels: &[usize]) -> Result<usize> {
    Ok(probs.argmax(1)?.iter().zip(labels).filter(|(p, l)| p == l).count())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Trains the unfrozen layers of `model` for `config.epochs` epochs.
///
/// Everything random comes from named streams of `config.seed`, so two runs
/// with the same inputs produce identical histories and parameters. A
/// non-finite loss or gradient stops training with an error; checkpoints of
/// completed epochs are left in place.
pub fn fit(
    model: &mut Model<f32>,
    train: &ClipSet,
    val: &ClipSet,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<History> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::invalid(format!(
            "training needs non-empty sets, got {} training and {} validation clips",
            train.len(),
            val.len()
        )));
    }
    if config.epochs == 0 || config.epochs > config.schedule.total_epochs() {
        return Err(Error::invalid(format!(
            "{} epochs requested but the schedule covers {}",
            config.epochs,
            config.schedule.total_epochs()
        )));
    }
    let arch = model.architecture();
    if [config.clip.size, config.clip.size, config.clip.frames] != arch.input {
        return Err(Error::invalid(format!(
            "clips of {0}x{0}x{1} do not fit a {2:?} input",
            config.clip.size, config.clip.frames, arch.input
        )));
    }
    if let Some(dir) = &config.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let mut adam = AdamState::new(config.adam);
    let mut dropout_rng = stream(config.seed, Stream::Dropout);
    let per_epoch = train.len().div_ceil(config.batch_size);
    let mut history = History::default();

    for epoch in 1..=config.epochs {
        let plans = plan_epoch(train, config.batch_size, Order::Train { seed: config.seed, epoch })?;
        let batches = Prefetcher::spawn(train.source.clone(), plans, config.clip, config.prefetch);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (it, batch) in batches.enumerate() {
            let batch = batch?;
            let lr = config.schedule.lr_at(epoch, it, per_epoch)?;
            let (loss, probs, grads) = model.loss_and_gradients(&batch.input, &batch.labels, &mut dropout_rng)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss at epoch {epoch}, iteration {it}")));
            }
            adam_step(model.trainable_parameters_mut(), |n| grads.get(n), &mut adam, lr)?;
            history.lr_trace.push((epoch, it, lr));
            loss_sum += loss * batch.labels.len() as f64;
            correct += count_correct(&probs, &batch.labels)?;
        }
        let (val_loss, val_acc) = validate(model, val, &config.clip, config.batch_size)?;
        let record = EpochRecord {
            epoch,
            phase: config.schedule.phase_index(epoch)?,
            lr: config.schedule.lr_at(epoch, 0, per_epoch)?,
            train_loss: loss_sum / train.len() as f64,
            train_acc: correct as f64 / train.len() as f64,
            val_loss,
            val_acc,
        };
        on_epoch(&record);
        history.epochs.push(record);
        if let Some(dir) = &config.out_dir {
            let meta = TrainingMeta {
                epoch: epoch as u32,
                seed: config.seed,
                step: adam.step_count(),
            };
            write_atomic(&dir.join(checkpoint_name(epoch)), &checkpoint::to_bytes(model, &meta))?;
            write_atomic(&dir.join("history.csv"), history.to_csv().as_bytes())?;
        }
    }
    Ok(history)
}
