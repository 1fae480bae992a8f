use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::kd::distill_student;
use super::DistillConfig;
use crate::data::{AugmentConfig, Dataset, LabeledView, MagTag, Split, UnlabeledView};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::resize::ResizeMode;
use crate::tensor::Scalar;

/// One (magnification, mode, seed) cell of the ablation grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mode: ResizeMode,
    pub magnification: MagTag,
    pub seed: u64,
    pub dev_accuracy: f64,
    pub best_epoch: usize,
    /// Fingerprint of the distillation run behind this cell.
    pub fingerprint: String,
    /// The exact config that reproduces the cell.
    pub config: DistillConfig,
}

impl AblationRow {
    pub fn csv(rows: &[AblationRow]) -> String {
        let mut out = String::from("mode,magnification,seed,dev_accuracy,best_epoch,fingerprint\n");
        for r in rows {
            let _ = writeln!(
                out,
                "{},{},{},{:.2},{},{}",
                r.mode.label(),
                r.magnification,
                r.seed,
                r.dev_accuracy,
                r.best_epoch,
                r.fingerprint
            );
        }
        out
    }
}

/// Distils one student per (magnification, mode, seed) from `teacher` on
/// `base.pool` and reports its development accuracy. Cells are independent;
/// up to `jobs` of them run at once and the output order is fixed.
#[allow(clippy::too_many_arguments)]
pub fn run_ablation<S: Scalar>(
    dataset: &Dataset,
    teacher: &Model<S>,
    base: &DistillConfig,
    aug: &AugmentConfig,
    magnifications: &[MagTag],
    modes: &[ResizeMode],
    seeds: &[u64],
    jobs: usize,
) -> Result<Vec<AblationRow>> {
    if magnifications.is_empty() || modes.is_empty() || seeds.is_empty() {
        return Err(Error::Config("ablation grid is empty".into()));
    }
    let mut views: BTreeMap<MagTag, (UnlabeledView, LabeledView)> = BTreeMap::new();
    for &mag in magnifications {
        views.insert(
            mag,
            (
                dataset.unlabeled(base.pool, base.teacher_mag, mag)?,
                dataset.labeled(Split::Development, mag)?,
            ),
        );
    }
    let cells: Vec<DistillConfig> = magnifications
        .iter()
        .flat_map(|&mag| {
            modes.iter().flat_map(move |&mode| {
                seeds.iter().map(move |&seed| DistillConfig {
                    student_mag: mag,
                    resize_mode: mode,
                    seed,
                    ..base.clone()
                })
            })
        })
        .collect();

    let run_cell = |cfg: &DistillConfig| -> Result<AblationRow> {
        let (pool, dev) = &views[&cfg.student_mag];
        let (_, result) = distill_student(teacher, pool, dev, cfg, aug)?;
        Ok(AblationRow {
            mode: cfg.resize_mode,
            magnification: cfg.student_mag,
            seed: cfg.seed,
            dev_accuracy: result.best().dev_accuracy,
            best_epoch: result.best_epoch,
            fingerprint: result.fingerprint,
            config: cfg.clone(),
        })
    };

    let jobs = jobs.clamp(1, cells.len());
    let mut slots: Vec<Option<Result<AblationRow>>> = (0..cells.len()).map(|_| None).collect();
    if jobs == 1 {
        for (slot, cfg) in slots.iter_mut().zip(&cells) {
            *slot = Some(run_cell(cfg));
        }
    } else {
        let results = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..jobs)
                .map(|w| {
                    let cells = &cells;
                    let run_cell = &run_cell;
                    scope.spawn(move || {
                        (w..cells.len())
                            .step_by(jobs)
                            .map(|i| (i, run_cell(&cells[i])))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("ablation worker panicked"))
                .collect::<Vec<_>>()
        });
        for (i, r) in results {
            slots[i] = Some(r);
        }
    }
    slots.into_iter().map(|s| s.expect("every cell ran")).collect()
}
