//! Run-level configuration: the union of every component config, with
//! defaults for every field. A resolved copy is written into each run's
//! output directory and is sufficient to replay the run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{AugmentConfig, DatasetSpec, MagTag};
use crate::distill::{DistillConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::resize::ResizeMode;
use crate::tensor::DType;

pub const RUN_CONFIG_FILE: &str = "run_config.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    pub magnifications: Vec<MagTag>,
    pub modes: Vec<ResizeMode>,
    pub seeds: Vec<u64>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            magnifications: [0.125, 0.25, 0.5].map(|m| MagTag::new(m).expect("valid")).to_vec(),
            modes: ResizeMode::ALL.to_vec(),
            seeds: vec![0, 1, 2],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub bootstrap_iterations: usize,
    pub alpha: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            bootstrap_iterations: 10_000,
            alpha: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub precision: DType,
    pub jobs: usize,
    pub data_dir: PathBuf,
    pub output_dir: PathBuf,
    /// Magnification of supervised training; `None` trains the teacher at
    /// `distill.teacher_mag`, anything else trains a low-resolution baseline.
    pub train_mag: Option<MagTag>,
    pub dataset: DatasetSpec,
    pub model: ModelConfig,
    pub augment: AugmentConfig,
    pub teacher: TrainConfig,
    pub distill: DistillConfig,
    pub finetune: TrainConfig,
    pub ablation: AblationConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            precision: DType::F32,
            jobs: 1,
            data_dir: PathBuf::from("data"),
            output_dir: PathBuf::from("runs"),
            train_mag: None,
            dataset: DatasetSpec::default(),
            model: ModelConfig::default(),
            augment: AugmentConfig::default(),
            teacher: TrainConfig::default(),
            distill: DistillConfig::default(),
            finetune: TrainConfig::fine_tune_default(),
            ablation: AblationConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    /// Copies the run seed into every component and validates the result.
    pub fn resolve(mut self) -> Result<Self> {
        self.dataset.seed = self.seed;
        self.teacher.seed = self.seed;
        self.distill.seed = self.seed;
        self.finetune.seed = self.seed;
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        self.dataset.synth.validate()?;
        self.dataset.split.validate()?;
        self.model.validate()?;
        self.augment.validate()?;
        self.teacher.validate()?;
        self.finetune.validate()?;
        self.distill.validate()?;
        Ok(self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(RUN_CONFIG_FILE);
        std::fs::write(&path, self.to_json()?).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve_and_round_trip() {
        let cfg = RunConfig {
            seed: 9,
            ..RunConfig::default()
        }
        .resolve()
        .unwrap();
        assert_eq!(cfg.distill.seed, 9);
        let back: RunConfig = serde_json::from_str(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_json_fills_defaults() {
        let cfg: RunConfig = serde_json::from_str(r#"{"seed": 3, "distill": {"temperature": 2.0}}"#).unwrap();
        assert_eq!(cfg.distill.temperature, 2.0);
        assert_eq!(cfg.distill.accumulation_size, 8);
        assert_eq!(cfg.model, ModelConfig::default());
    }
}
