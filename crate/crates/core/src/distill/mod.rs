//! The three training phases and the resize-mode ablation.
//!
//! Phase I trains a teacher with cross-entropy at the teacher magnification.
//! Phase II trains a fresh student on unlabeled image pairs against the
//! frozen teacher. Phase III optionally retrains only the student's linear
//! head on labeled data. Every phase accumulates per-sample gradients over
//! `accumulation_size` samples before one Adam step.

mod ablation;
mod kd;
mod loss;
mod supervised;
mod trace;

use serde::{Deserialize, Serialize};

use crate::data::{LabeledView, MagTag, Split};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::resize::ResizeMode;
use crate::tensor::{AdamConfig, Scalar, Tensor};

pub use ablation::{run_ablation, AblationRow};
pub use kd::distill_student;
pub use loss::{distill_loss, distill_loss_values, DistillLoss};
pub use supervised::{fine_tune, train_supervised, train_teacher};
pub use trace::{EpochRecord, PhaseResult};

/// Settings of a supervised phase (teacher, baseline, fine-tuning).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub epochs: usize,
    pub accumulation_size: usize,
    pub augment: bool,
    /// Stop after this many epochs without a validation-loss improvement.
    pub patience: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamConfig::default(),
            epochs: 60,
            accumulation_size: 8,
            augment: true,
            patience: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn fine_tune_default() -> Self {
        TrainConfig {
            epochs: 100,
            patience: Some(10),
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        if self.epochs == 0 || self.accumulation_size == 0 {
            return Err(Error::Config("epochs and accumulation_size must be positive".into()));
        }
        if self.patience == Some(0) {
            return Err(Error::Config("patience must be positive".into()));
        }
        Ok(())
    }
}

/// Every free parameter of the distillation objective and its training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillConfig {
    pub temperature: f64,
    pub resize_mode: ResizeMode,
    pub soft_weight: f64,
    pub pixel_weight: f64,
    pub teacher_mag: MagTag,
    pub student_mag: MagTag,
    pub adam: AdamConfig,
    pub epochs: usize,
    pub accumulation_size: usize,
    pub seed: u64,
    /// Start the student from the teacher's weights instead of He init.
    pub warm_start: bool,
    /// Apply online augmentation (identically to both views) in this phase.
    pub augment: bool,
    /// Which split supplies the unlabeled images.
    pub pool: Split,
    /// Skip fine-tuning afterwards; meant for runs whose pool is the
    /// labeled training split.
    pub skip_finetune: bool,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            temperature: 4.0,
            resize_mode: ResizeMode::MpAndInt,
            soft_weight: 1.0,
            pixel_weight: 1.0,
            teacher_mag: MagTag::BASE,
            student_mag: MagTag::new(0.125).expect("valid"),
            adam: AdamConfig::default(),
            epochs: 60,
            accumulation_size: 8,
            seed: 0,
            warm_start: false,
            augment: true,
            pool: Split::AuxV1,
            skip_finetune: false,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!(
                "temperature {} must be positive",
                self.temperature
            )));
        }
        if !(self.soft_weight >= 0.0 && self.pixel_weight >= 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if self.student_mag > self.teacher_mag {
            return Err(Error::Config(format!(
                "student magnification {} exceeds teacher magnification {}",
                self.student_mag, self.teacher_mag
            )));
        }
        if self.epochs == 0 || self.accumulation_size == 0 {
            return Err(Error::Config("epochs and accumulation_size must be positive".into()));
        }
        Ok(())
    }
}

const EVAL_BATCH: usize = 16;

/// Argmax predictions over a labeled view, without augmentation.
pub fn predict_view<S: Scalar>(model: &Model<S>, view: &LabeledView) -> Result<Vec<usize>> {
    Ok(eval_view(model, view)?.0)
}

/// Predictions and mean cross-entropy over a labeled view.
pub(crate) fn eval_view<S: Scalar>(model: &Model<S>, view: &LabeledView) -> Result<(Vec<usize>, f64)> {
    let mut preds = Vec::with_capacity(view.len());
    let mut loss = 0.0;
    let k = model.config().num_classes;
    for start in (0..view.len()).step_by(EVAL_BATCH) {
        let end = (start + EVAL_BATCH).min(view.len());
        let inputs = (start..end)
            .map(|i| view.input::<S>(i, None)?.reshape(view.images[i].shape().to_vec()))
            .collect::<Result<Vec<_>>>()?;
        let out = model.infer(&Tensor::stack(&inputs)?)?;
        for (row, label) in out.logits.data().chunks(k).zip(&view.labels[start..end]) {
            preds.push(crate::model::argmax(row));
            let logits = Tensor::new(vec![1, k], row.to_vec())?;
            loss += crate::tensor::cross_entropy_loss(&logits, &[*label])?
                .item()?
                .to_f64_lossy();
        }
    }
    Ok((preds, loss / view.len().max(1) as f64))
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    100.0 * preds.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / labels.len() as f64
}
