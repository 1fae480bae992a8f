use std::time::Instant;

use rand::seq::SliceRandom;

use super::loss::distill_loss;
use super::trace::{EpochRecord, PhaseResult};
use super::{accuracy, eval_view, DistillConfig};
use crate::data::{AugmentConfig, AugmentParams, LabeledView, UnlabeledView};
use crate::error::{Error, Result};
use crate::model::{ForwardValues, Model};
use crate::seed;
use crate::tensor::{adam_step, Scalar, Tape};

/// Phase II. The student sees the student-magnification view of each pool
/// image and learns to match the frozen teacher's outputs on the
/// teacher-magnification view. The pool type carries no labels; `dev`
/// (at the student magnification) only selects the kept epoch.
pub fn distill_student<S: Scalar>(
    teacher: &Model<S>,
    pool: &UnlabeledView,
    dev: &LabeledView,
    cfg: &DistillConfig,
    aug: &AugmentConfig,
) -> Result<(Model<S>, PhaseResult)> {
    cfg.validate()?;
    if pool.is_empty() || dev.is_empty() {
        return Err(Error::Config(
            "distillation needs a nonempty pool and development set".into(),
        ));
    }
    let start = Instant::now();
    let fingerprint = seed::fingerprint(
        serde_json::json!({
            "phase": "distill",
            "config": cfg,
            "augment": aug,
            "model": teacher.config(),
            "teacher": seed::fingerprint(&teacher.param_bytes()),
            "pool": pool.ids,
            "development": dev.ids,
        })
        .to_string()
        .as_bytes(),
    );
    let mut student = if cfg.warm_start {
        let mut s = teacher.clone();
        s.unfreeze();
        s
    } else {
        Model::build(teacher.config(), seed::derive(cfg.seed, "student/init"))?
    };
    for p in student.params_mut().iter_mut() {
        *p = crate::tensor::Parameter::new(p.name.clone(), p.value.clone());
    }

    // Without augmentation the teacher sees the same input every epoch.
    let cache: Option<Vec<ForwardValues<S>>> = if cfg.augment {
        None
    } else {
        Some(
            (0..pool.len())
                .map(|i| teacher.infer(&pool.pair::<S>(i, None)?.0))
                .collect::<Result<_>>()?,
        )
    };

    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, Model<S>)> = None;
    let mut order: Vec<usize> = (0..pool.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut seed::rng(cfg.seed, &format!("distill/order/{epoch}")));
        let mut aug_rng = seed::rng(cfg.seed, &format!("distill/augment/{epoch}"));
        let (mut soft_sum, mut pixel_sum, mut total_sum) = (0.0, 0.0, 0.0);
        for chunk in order.chunks(cfg.accumulation_size) {
            for &i in chunk {
                let params = cfg.augment.then(|| AugmentParams::sample(aug, &mut aug_rng));
                let (t_in, s_in) = pool.pair::<S>(i, params.as_ref())?;
                let t_out = match &cache {
                    Some(c) => c[i].clone(),
                    None => teacher.infer(&t_in)?,
                };
                let mut tape = Tape::new();
                let x = tape.constant(s_in);
                let s_out = student.forward(&mut tape, x, true)?;
                let l = distill_loss(&mut tape, &t_out, s_out, cfg)?;
                let val = |v| tape.value(v).item().map(|x: S| x.to_f64_lossy());
                soft_sum += val(l.soft)?;
                pixel_sum += val(l.pixel)?;
                total_sum += val(l.total)?;
                let scaled = tape.scale(l.total, 1.0 / chunk.len() as f64);
                tape.backward_into(scaled, student.params_mut())?;
            }
            adam_step(student.params_mut(), &cfg.adam);
        }
        let (preds, dev_loss) = eval_view(&student, dev)?;
        let n = pool.len() as f64;
        let record = EpochRecord {
            epoch,
            soft_loss: Some(soft_sum / n),
            pixel_loss: Some(pixel_sum / n),
            total_loss: total_sum / n,
            dev_loss: Some(dev_loss),
            dev_accuracy: accuracy(&preds, &dev.labels),
        };
        let improved = match &best {
            None => true,
            Some((b, _)) => {
                let prev: &EpochRecord = &trace[*b - 1];
                record.dev_accuracy > prev.dev_accuracy
                    || (record.dev_accuracy == prev.dev_accuracy && dev_loss < prev.dev_loss.unwrap_or(f64::INFINITY))
            }
        };
        trace.push(record);
        if improved {
            best = Some((epoch, student.clone()));
        }
    }
    let (best_epoch, best_model) = best.expect("at least one epoch");
    Ok((
        best_model,
        PhaseResult {
            phase: "distill".to_string(),
            trace,
            best_epoch,
            fingerprint,
            seconds: start.elapsed().as_secs_f64(),
        },
    ))
}
