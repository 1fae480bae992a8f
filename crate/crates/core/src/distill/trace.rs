use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::Scalar;

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const TRACE_FILE: &str = "trace.csv";
pub const PHASE_FILE: &str = "phase.json";
pub const TIMING_FILE: &str = "timing.json";

/// One row of `trace.csv`. Loss columns are means over the epoch's training
/// samples; columns a phase does not have are left empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub soft_loss: Option<f64>,
    pub pixel_loss: Option<f64>,
    pub total_loss: f64,
    pub dev_loss: Option<f64>,
    pub dev_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseResult {
    pub phase: String,
    pub trace: Vec<EpochRecord>,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
    pub fingerprint: String,
    #[serde(skip)]
    pub seconds: f64,
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.8}")).unwrap_or_default()
}

impl PhaseResult {
    pub fn best(&self) -> &EpochRecord {
        &self.trace[self.best_epoch - 1]
    }

    pub fn trace_csv(&self) -> String {
        let mut out = String::from("epoch,soft_loss,pixel_loss,total_loss,dev_loss,dev_accuracy\n");
        for r in &self.trace {
            let _ = writeln!(
                out,
                "{},{},{},{:.8},{},{:.4}",
                r.epoch,
                cell(r.soft_loss),
                cell(r.pixel_loss),
                r.total_loss,
                cell(r.dev_loss),
                r.dev_accuracy
            );
        }
        out
    }

    /// Writes the checkpoint, `trace.csv`, `phase.json` and the
    /// (non-deterministic) `timing.json` into `dir`.
    pub fn write<S: Scalar>(&self, dir: &Path, model: &Model<S>) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let ckpt = dir.join(CHECKPOINT_FILE);
        model.save(&ckpt)?;
        let put = |name: &str, text: String| {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
        };
        put(TRACE_FILE, self.trace_csv())?;
        put(PHASE_FILE, serde_json::to_string_pretty(self)? + "\n")?;
        put(
            TIMING_FILE,
            serde_json::to_string_pretty(&serde_json::json!({ "seconds": self.seconds }))? + "\n",
        )?;
        Ok(ckpt)
    }
}
