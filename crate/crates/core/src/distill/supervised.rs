use std::time::Instant;

use rand::seq::SliceRandom;

use super::trace::{EpochRecord, PhaseResult};
use super::{accuracy, eval_view, TrainConfig};
use crate::data::{AugmentConfig, AugmentParams, LabeledView};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::seed;
use crate::tensor::{adam_step, Scalar, Tape};

/// Phase I: a fresh model trained with cross-entropy at the teacher
/// magnification, keeping the epoch with the best validation accuracy.
pub fn train_teacher<S: Scalar>(
    model_cfg: &ModelConfig,
    train: &LabeledView,
    val: &LabeledView,
    cfg: &TrainConfig,
    aug: &AugmentConfig,
) -> Result<(Model<S>, PhaseResult)> {
    train_supervised("teacher", model_cfg, train, val, cfg, aug)
}

/// Supervised training from He init under the label `phase` (e.g. the
/// low-resolution baseline uses `"baseline"`).
pub fn train_supervised<S: Scalar>(
    phase: &str,
    model_cfg: &ModelConfig,
    train: &LabeledView,
    val: &LabeledView,
    cfg: &TrainConfig,
    aug: &AugmentConfig,
) -> Result<(Model<S>, PhaseResult)> {
    let model = Model::build(model_cfg, seed::derive(cfg.seed, &format!("{phase}/init")))?;
    run(phase, model, train, val, cfg, aug, Selection::Accuracy)
}

/// Phase III: only the linear head is trained; stops once validation loss
/// has not improved for `patience` epochs and keeps the lowest-loss epoch.
pub fn fine_tune<S: Scalar>(
    mut student: Model<S>,
    train: &LabeledView,
    val: &LabeledView,
    cfg: &TrainConfig,
    aug: &AugmentConfig,
) -> Result<(Model<S>, PhaseResult)> {
    student.freeze_except_fc();
    let (mut model, result) = run("finetune", student, train, val, cfg, aug, Selection::Loss)?;
    model.unfreeze();
    Ok((model, result))
}

#[derive(Clone, Copy, PartialEq)]
enum Selection {
    /// Highest validation accuracy, ties broken by lower validation loss.
    Accuracy,
    Loss,
}

fn better(sel: Selection, new: &EpochRecord, best: &EpochRecord) -> bool {
    let (nl, bl) = (
        new.dev_loss.unwrap_or(f64::INFINITY),
        best.dev_loss.unwrap_or(f64::INFINITY),
    );
    match sel {
        Selection::Accuracy => {
            new.dev_accuracy > best.dev_accuracy || (new.dev_accuracy == best.dev_accuracy && nl < bl)
        }
        Selection::Loss => nl < bl,
    }
}

fn run<S: Scalar>(
    phase: &str,
    mut model: Model<S>,
    train: &LabeledView,
    val: &LabeledView,
    cfg: &TrainConfig,
    aug: &AugmentConfig,
    selection: Selection,
) -> Result<(Model<S>, PhaseResult)> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config(format!(
            "{phase}: training and validation sets must be nonempty"
        )));
    }
    let start = Instant::now();
    let fingerprint = seed::fingerprint(
        serde_json::json!({
            "phase": phase,
            "config": cfg,
            "augment": aug,
            "model": model.config(),
            "train": train.ids,
            "validation": val.ids,
        })
        .to_string()
        .as_bytes(),
    );
    let mut trace: Vec<EpochRecord> = Vec::new();
    let mut best: Option<(usize, Model<S>)> = None;
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut seed::rng(cfg.seed, &format!("{phase}/order/{epoch}")));
        let mut aug_rng = seed::rng(cfg.seed, &format!("{phase}/augment/{epoch}"));
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.accumulation_size) {
            for &i in chunk {
                let params = cfg.augment.then(|| AugmentParams::sample(aug, &mut aug_rng));
                let input = train.input::<S>(i, params.as_ref())?;
                let mut tape = Tape::new();
                let x = tape.constant(input);
                let out = model.forward(&mut tape, x, true)?;
                let ce = tape.cross_entropy_loss(out.logits, &[train.labels[i]])?;
                loss_sum += tape.value(ce).item()?.to_f64_lossy();
                let scaled = tape.scale(ce, 1.0 / chunk.len() as f64);
                tape.backward_into(scaled, model.params_mut())?;
            }
            adam_step(model.params_mut(), &cfg.adam);
        }
        let (preds, val_loss) = eval_view(&model, val)?;
        let record = EpochRecord {
            epoch,
            soft_loss: None,
            pixel_loss: None,
            total_loss: loss_sum / train.len() as f64,
            dev_loss: Some(val_loss),
            dev_accuracy: accuracy(&preds, &val.labels),
        };
        let improved = match &best {
            None => true,
            Some((b, _)) => better(selection, &record, &trace[b - 1]),
        };
        trace.push(record);
        if improved {
            best = Some((epoch, model.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience.is_some_and(|p| since_best >= p) {
                break;
            }
        }
    }
    let (best_epoch, best_model) = best.expect("at least one epoch");
    Ok((
        best_model,
        PhaseResult {
            phase: phase.to_string(),
            trace,
            best_epoch,
            fingerprint,
            seconds: start.elapsed().as_secs_f64(),
        },
    ))
}
