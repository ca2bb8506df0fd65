//! The training loop.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use super::checkpoint::{save_checkpoint, Checkpoint};
use super::config::TrainConfig;
use super::data::{epoch_permutation, eval_batch, load_samples, train_batch, train_chunks, Sample};
use super::eval::evaluate;
use super::optimizer::{sgd_momentum_step, OptimizerState};
use crate::error::{Error, Result};
use crate::net::Network;
use crate::ops::Mode;
use crate::preprocess::{AugmentWarnings, Manifest};
use crate::tensor::Tensor;

pub const LOG_FILE: &str = "train_log.tsv";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

pub fn epoch_checkpoint_name(epoch: u32) -> String {
    format!("epoch_{epoch:03}.ckpt")
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: u32,
    pub mean_loss: f64,
    pub val_accuracy: f64,
    pub seconds: f64,
}

impl EpochRecord {
    pub fn to_line(&self) -> String {
        format!(
            "{}\t{:.6}\t{:.4}\t{:.3}",
            self.epoch, self.mean_loss, self.val_accuracy, self.seconds
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub network: Network,
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochRecord>,
    pub best_epoch: Option<u32>,
    pub warnings: AugmentWarnings,
}

/// Decodes both manifests and trains. See [`train_samples`].
pub fn train(config: &TrainConfig, train: &Manifest, val: &Manifest) -> Result<TrainOutcome> {
    config.validate()?;
    let train_set = load_samples(train, &config.data_dir)?;
    let val_set = load_samples(val, &config.data_dir)?;
    train_samples(config, &train_set, &val_set)
}

/// Runs `config.epochs` epochs of shuffled, augmented mini-batches with
/// batch norm in train mode. After each epoch it writes
/// `epoch_NNN.ckpt` and a log line into the checkpoint directory and
/// refreshes `best.ckpt` when validation accuracy improves (ties keep the
/// earlier epoch). `final.ckpt` holds the last state, which is the
/// initialization when `epochs == 0`.
pub fn train_samples(
    config: &TrainConfig,
    train_set: &[Sample],
    val_set: &[Sample],
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Validation("training manifest is empty".to_string()));
    }
    let dir = &config.checkpoint_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let log_path = dir.join(LOG_FILE);
    std::fs::write(&log_path, "").map_err(|e| Error::io(&log_path, e))?;

    let mut net = Network::build_preset(config.preset, config.input_size, config.seed)?;
    let names = net.trainable_names();
    let mut opt = OptimizerState::zeros_like(net.trainable_tensors());
    let mut log = Vec::new();
    let mut best: Option<(f64, u32)> = None;
    let mut warnings = AugmentWarnings::default();
    let size = config.input_size;

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let order = epoch_permutation(config.seed, epoch, train_set.len());
        let mut loss_sum = 0.0f64;
        for (b, idx) in train_chunks(&order, config.batch_size).into_iter().enumerate() {
            let (x, labels, w) = train_batch(
                train_set,
                idx,
                epoch,
                config.seed,
                &config.augmentation,
                size,
            )?;
            warnings.degenerate_boxes += w.degenerate_boxes;
            let at = |e| locate(e, &format!("at epoch {epoch}, batch {}", b + 1));
            let mut fwd = net.forward_taped(x, Mode::Train).map_err(at)?;
            let loss = fwd.tape.softmax_cross_entropy(fwd.logits, &labels).map_err(at)?;
            let value = fwd.tape.value_of(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::Numeric(format!(
                    "loss is {value} at epoch {epoch}, batch {}",
                    b + 1
                )));
            }
            loss_sum += value as f64 * idx.len() as f64;
            let mut grads = fwd.tape.backward(loss).map_err(at)?;
            let by_name: HashMap<&str, _> =
                fwd.tape.params().iter().map(|(n, v)| (n.as_str(), *v)).collect();
            let grads: Vec<Tensor> = names
                .iter()
                .map(|n| {
                    by_name
                        .get(n.as_str())
                        .and_then(|v| grads.take(*v))
                        .ok_or_else(|| Error::Usage(format!("no gradient for {n}")))
                })
                .collect::<Result<_>>()?;
            for (n, g) in names.iter().zip(&grads) {
                if !g.all_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite gradient for {n} at epoch {epoch}, batch {}",
                        b + 1
                    )));
                }
            }
            net.apply_bn_stats(&fwd.bn_stats)?;
            let grad_refs: Vec<&Tensor> = grads.iter().collect();
            let mut params: Vec<&mut Tensor> =
                net.trainable_mut().into_iter().map(|(_, t)| t).collect();
            sgd_momentum_step(
                &mut params,
                &grad_refs,
                &mut opt,
                config.learning_rate,
                config.momentum,
            )?;
        }
        if config.recalibrate_bn {
            let batches = train_chunks(train_set, config.batch_size)
                .into_iter()
                .map(|c| eval_batch(c, size))
                .collect::<Result<Vec<_>>>()?;
            net.recalibrate_bn(batches)
                .map_err(|e| locate(e, &format!("in recalibration after epoch {epoch}")))?;
        }
        let val_accuracy = if val_set.is_empty() {
            0.0
        } else {
            evaluate(&net, val_set, config.batch_size)
                .map_err(|e| locate(e, &format!("in validation after epoch {epoch}")))?
                .accuracy()
        };
        let record = EpochRecord {
            epoch,
            mean_loss: loss_sum / train_set.len() as f64,
            val_accuracy,
            seconds: started.elapsed().as_secs_f64(),
        };
        append_line(&log_path, &record.to_line())?;
        log.push(record);

        let ckpt = Checkpoint::capture(&net, &opt, epoch, config.seed)?;
        save_checkpoint(&ckpt, &dir.join(epoch_checkpoint_name(epoch)))?;
        if best.is_none_or(|(acc, _)| val_accuracy > acc) {
            best = Some((val_accuracy, epoch));
            save_checkpoint(&ckpt, &dir.join(BEST_CHECKPOINT))?;
        }
    }
    let checkpoint = Checkpoint::capture(&net, &opt, config.epochs, config.seed)?;
    save_checkpoint(&checkpoint, &dir.join(FINAL_CHECKPOINT))?;
    Ok(TrainOutcome {
        network: net,
        checkpoint,
        log,
        best_epoch: best.map(|(_, e)| e),
        warnings,
    })
}

fn append_line(path: &Path, line: &str) -> Result<()> {
    use std::io::Write;
    let mut f = std::fs::OpenOptions::new()
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}

/// Log text for a run, as written to `train_log.tsv` (timings aside).
/// Appends training coordinates to numeric failures.
fn locate(e: Error, place: &str) -> Error {
    match e {
        Error::Numeric(m) => Error::Numeric(format!("{m} {place}")),
        other => other,
    }
}

pub fn render_log(log: &[EpochRecord]) -> String {
    let mut s = String::new();
    for r in log {
        let _ = writeln!(s, "{}", r.to_line());
    }
    s
}
