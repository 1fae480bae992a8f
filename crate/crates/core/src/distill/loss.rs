use super::DistillConfig;
use crate::error::{shape_err, Result};
use crate::model::{ForwardValues, ModelOutput};
use crate::resize::{resize_teacher_maps, ResizeMode};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Tape handles of the three loss terms.
#[derive(Clone, Copy, Debug)]
pub struct DistillLoss {
    pub total: Var,
    pub soft: Var,
    pub pixel: Var,
}

/// `soft_weight · soft + pixel_weight · pixel`, where `soft` is the
/// temperature-scaled KL term and `pixel` is the mean over active resizers
/// of `mse(g(teacher map), student map)`. Teacher outputs enter as
/// constants, so gradients reach the student only.
pub fn distill_loss<S: Scalar>(
    tape: &mut Tape<S>,
    teacher: &ForwardValues<S>,
    student: ModelOutput,
    cfg: &DistillConfig,
) -> Result<DistillLoss> {
    let t_logits = tape.constant(teacher.logits.clone());
    let soft = tape.soft_loss(t_logits, student.logits, cfg.temperature)?;
    let pixel = match cfg.resize_mode {
        ResizeMode::None => tape.constant(Tensor::scalar(S::zero())),
        mode => {
            let student_shape = tape.value(student.feature_map).shape().to_vec();
            if teacher.feature_map.shape().len() != student_shape.len() {
                return Err(shape_err!(
                    "teacher map {:?} vs student map {student_shape:?}",
                    teacher.feature_map.shape()
                ));
            }
            let maps = resize_teacher_maps(&teacher.feature_map, &student_shape, mode)?;
            let k = maps.resized_teacher_maps.len();
            let mut acc: Option<Var> = None;
            for m in maps.resized_teacher_maps {
                let target = tape.constant(m);
                let term = tape.mse_loss(target, student.feature_map)?;
                acc = Some(match acc {
                    Some(a) => tape.add(a, term)?,
                    None => term,
                });
            }
            let sum = acc.expect("at least one active resizer");
            tape.scale(sum, 1.0 / k as f64)
        }
    };
    let ws = tape.scale(soft, cfg.soft_weight);
    let wp = tape.scale(pixel, cfg.pixel_weight);
    let total = tape.add(ws, wp)?;
    Ok(DistillLoss { total, soft, pixel })
}

/// Value-only form of [`distill_loss`]: `(total, soft, pixel)`.
pub fn distill_loss_values<S: Scalar>(
    teacher: &ForwardValues<S>,
    student: &ForwardValues<S>,
    cfg: &DistillConfig,
) -> Result<(f64, f64, f64)> {
    let mut tape = Tape::new();
    let feature_map = tape.constant(student.feature_map.clone());
    let logits = tape.constant(student.logits.clone());
    let l = distill_loss(&mut tape, teacher, ModelOutput { feature_map, logits }, cfg)?;
    let get = |v: Var| tape.value(v).item().map(|x| x.to_f64_lossy());
    Ok((get(l.total)?, get(l.soft)?, get(l.pixel)?))
}
