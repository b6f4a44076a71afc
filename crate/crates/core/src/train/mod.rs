//! Cross-entropy training with Adam, evaluation and ROC analysis.

pub mod adam;
pub mod roc;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use adam::{adam_step, Adam, AdamConfig, AdamState};
pub use roc::{roc_auroc, roc_csv, trapezoid, RocCurve, RocPoint};

use crate::autograd::Tape;
use crate::data::{batches, black_image, load_batch, DatasetManifest, ImageLoader, Label, Split};
use crate::error::{DataError, Error, Result};
use crate::model::{save_checkpoint, Mode, ModelGraph, Variant};
use crate::tensor::Tensor;

/// Switch to `lr` from 1-based epoch `epoch` onward.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub epoch: usize,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub schedule: Option<StepSchedule>,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub seed: u64,
    /// Where `best.ckpt` is written; `None` keeps checkpoints in memory only.
    pub checkpoint_dir: Option<PathBuf>,
    /// Stop once inference-mode training accuracy reaches this value.
    pub stop_at_train_accuracy: Option<f64>,
}

impl TrainConfig {
    /// Baseline: 1e-4, dropping to 1e-5 at epoch 85. Other variants: Adam defaults.
    pub fn for_variant(variant: Variant) -> Self {
        let (lr, schedule) = match variant {
            Variant::Baseline => (1e-4, Some(StepSchedule { epoch: 85, lr: 1e-5 })),
            _ => (1e-3, None),
        };
        Self {
            epochs: 100,
            lr,
            schedule,
            adam: AdamConfig::default(),
            batch_size: 32,
            seed: 0,
            checkpoint_dir: None,
            stop_at_train_accuracy: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if let Some(s) = self.schedule {
            if s.epoch == 0 || s.epoch > self.epochs {
                return Err(Error::Config(format!(
                    "schedule epoch {} outside 1..={}",
                    s.epoch, self.epochs
                )));
            }
            if !(s.lr > 0.0 && s.lr.is_finite()) {
                return Err(Error::Config(format!("scheduled rate {} must be positive", s.lr)));
            }
        }
        Ok(())
    }

    /// Learning rate used during 1-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.schedule {
            Some(s) if epoch >= s.epoch => s.lr,
            _ => self.lr,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: Option<f64>,
    pub lr: f64,
    pub train_acc: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_val_acc: Option<f64>,
    pub best_checkpoint: Option<PathBuf>,
}

impl TrainHistory {
    /// `epoch,train_loss,val_acc,lr`; a missing validation accuracy is left empty.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["epoch", "train_loss", "val_acc", "lr"])
            .expect("in-memory csv");
        for r in &self.records {
            w.write_record([
                r.epoch.to_string(),
                r.train_loss.to_string(),
                r.val_acc.map_or(String::new(), |a| a.to_string()),
                r.lr.to_string(),
            ])
            .expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is UTF-8")
    }
}

/// One optimization step on a batch; returns the batch loss.
pub fn train_step(
    model: &mut ModelGraph<f32>,
    optimizer: &mut Adam,
    images: &Tensor<f32>,
    labels: &[usize],
    lr: f64,
) -> Result<f64> {
    let mut tape = Tape::new();
    let x = tape.constant(images.clone());
    let logits = model.forward(&mut tape, x, Mode::Train)?;
    let loss = tape.cross_entropy(logits, labels)?;
    let value = tape.value(loss).data()[0] as f64;
    if !value.is_finite() {
        return Err(Error::NonFinite("loss"));
    }
    model.params_mut().zero_grads();
    tape.backward(loss, model.params_mut())?;
    tape.apply_running_updates(model.params_mut());
    optimizer.step(model.params_mut(), lr);
    Ok(value)
}

/// Trains on the manifest's train split and tracks validation accuracy.
///
/// A checkpoint is written whenever validation accuracy strictly improves,
/// so ties keep the earlier epoch.
pub fn train(
    model: &mut ModelGraph<f32>,
    manifest: &DatasetManifest,
    loader: &mut ImageLoader,
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if manifest.indices(Split::Train).is_empty() {
        return Err(DataError::EmptySplit(Split::Train.to_string()).into());
    }
    let has_val = !manifest.indices(Split::Val).is_empty();
    if let Some(dir) = &cfg.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut optimizer = Adam::new(cfg.adam);
    let mut history = TrainHistory::default();
    for epoch in 1..=cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        let stream = batches(manifest, Split::Train, cfg.batch_size, cfg.seed, epoch as u64, loader)?;
        for (b, batch) in stream.enumerate() {
            let batch = batch?;
            let loss = train_step(model, &mut optimizer, &batch.images, &batch.labels, lr).map_err(|e| match e {
                Error::NonFinite(_) => Error::NanLoss { epoch, batch: b + 1 },
                other => other,
            })?;
            loss_sum += loss * batch.labels.len() as f64;
            seen += batch.labels.len();
        }
        let train_loss = loss_sum / seen as f64;
        let val_acc = if has_val {
            Some(evaluate(model, manifest, Split::Val, loader, cfg.batch_size)?.accuracy)
        } else {
            None
        };
        let train_acc = match cfg.stop_at_train_accuracy {
            Some(_) => Some(evaluate(model, manifest, Split::Train, loader, cfg.batch_size)?.accuracy),
            None => None,
        };
        log::info!("epoch {epoch}: loss {train_loss:.5}, lr {lr:e}, val {val_acc:?}, train {train_acc:?}");
        history.records.push(EpochRecord {
            epoch,
            train_loss,
            val_acc,
            lr,
            train_acc,
        });
        if let Some(acc) = val_acc {
            if history.best_val_acc.is_none_or(|best| acc > best) {
                history.best_val_acc = Some(acc);
                history.best_epoch = Some(epoch);
                if let Some(dir) = &cfg.checkpoint_dir {
                    let path = dir.join("best.ckpt");
                    save_checkpoint(model, &path)?;
                    history.best_checkpoint = Some(path);
                }
            }
        }
        if let (Some(target), Some(acc)) = (cfg.stop_at_train_accuracy, train_acc) {
            if acc >= target {
                break;
            }
        }
    }
    Ok(history)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    /// `confusion[true][predicted]`, indices 0 = no-fire, 1 = fire.
    pub confusion: [[usize; 2]; 2],
    /// Softmax fire probability per sample, in manifest order.
    pub scores: Vec<f64>,
    pub labels: Vec<usize>,
}

/// Softmax probabilities `[no-fire, fire]` of one row of logits, in f64.
pub fn probabilities(logits: &[f32]) -> [f64; 2] {
    let (a, b) = (logits[0] as f64, logits[1] as f64);
    let m = a.max(b);
    let (ea, eb) = ((a - m).exp(), (b - m).exp());
    [ea / (ea + eb), eb / (ea + eb)]
}

/// Argmax class; ties go to no-fire.
pub fn predicted_class(logits: &[f32]) -> usize {
    usize::from(logits[1] > logits[0])
}

/// Inference-mode accuracy, confusion counts and fire scores over a split.
pub fn evaluate(
    model: &ModelGraph<f32>,
    manifest: &DatasetManifest,
    split: Split,
    loader: &mut ImageLoader,
    batch_size: usize,
) -> Result<Evaluation> {
    let idx = manifest.indices(split);
    if idx.is_empty() {
        return Err(DataError::EmptySplit(split.to_string()).into());
    }
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let mut confusion = [[0usize; 2]; 2];
    let mut scores = Vec::with_capacity(idx.len());
    let mut labels = Vec::with_capacity(idx.len());
    for chunk in idx.chunks(batch_size) {
        let batch = load_batch(manifest, chunk, loader)?;
        let logits = model.logits(&batch.images)?;
        for (row, &label) in logits.data().chunks(2).zip(&batch.labels) {
            let pred = predicted_class(row);
            confusion[label][pred] += 1;
            scores.push(probabilities(row)[1]);
            labels.push(label);
        }
    }
    let correct = confusion[0][0] + confusion[1][1];
    Ok(Evaluation {
        accuracy: correct as f64 / idx.len() as f64,
        confusion,
        scores,
        labels,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: Label,
    pub fire_probability: f64,
    pub probabilities: [f64; 2],
}

/// Classifies a single `1 × 3 × H × W` image.
pub fn predict(model: &ModelGraph<f32>, image: &Tensor<f32>) -> Result<Prediction> {
    if image.shape().n != 1 {
        return Err(Error::InvalidShape(format!(
            "predict expects one image, got {}",
            image.shape()
        )));
    }
    let logits = model.logits(image)?;
    let p = probabilities(logits.data());
    let label = Label::from_index(predicted_class(logits.data())).expect("two classes");
    Ok(Prediction {
        label,
        fire_probability: p[1],
        probabilities: p,
    })
}

/// Runs the all-zero image through the model.
pub fn black_image_test(model: &ModelGraph<f32>) -> Result<Prediction> {
    predict(model, &black_image(model.config().input_size))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocSummary {
    pub auroc: f64,
    pub accuracy: f64,
}
