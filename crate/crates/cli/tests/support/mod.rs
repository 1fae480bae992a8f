#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use resdistill_cli::dispatch;

/// A run small enough to go through every subcommand in seconds.
pub const SMALL_CONFIG: &str = r#"{
  "dataset": {
    "synth": { "num_patients": 40, "base_size": 32, "blob_period": 8.0 },
    "magnifications": [1.0, 0.5, 0.25]
  },
  "model": { "stage_widths": [8, 16], "blocks_per_stage": 1, "num_classes": 3, "num_groups": 4 },
  "teacher": { "epochs": 2, "accumulation_size": 4 },
  "distill": { "epochs": 2, "accumulation_size": 4, "student_mag": 0.25 },
  "finetune": { "epochs": 2, "accumulation_size": 4 },
  "eval": { "bootstrap_iterations": 200 },
  "ablation": { "magnifications": [0.25], "modes": ["none", "mp_and_int"], "seeds": [0] }
}
"#;

pub fn write_config(dir: &Path) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, SMALL_CONFIG).unwrap();
    p
}

pub fn run(args: &[&str]) -> i32 {
    let mut full = vec!["resdistill", "--quiet"];
    full.extend_from_slice(args);
    dispatch(full)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// gen-data, teacher, baseline, distill, finetune, eval, ablate, report.
pub fn pipeline(config: &Path, data: &Path, out: &Path) -> Vec<i32> {
    let common = ["--config", s(config), "--data-dir", s(data), "--output-dir", s(out)];
    let with = |cmd: &[&str]| {
        let mut a: Vec<&str> = cmd.to_vec();
        a.extend_from_slice(&common);
        run(&a)
    };
    vec![
        with(&["gen-data"]),
        with(&["train-teacher"]),
        with(&["train-teacher", "--mag", "0.25"]),
        with(&["distill"]),
        with(&["finetune"]),
        with(&["eval"]),
        with(&["ablate"]),
        with(&["report"]),
    ]
}

/// Replays each stage of `first` from the config it persisted, writing into
/// `second`. Returns the exit codes.
pub fn replay(first: &Path, second: &Path) -> Vec<i32> {
    let stages: [(&str, &str); 7] = [
        ("train-teacher", "teacher"),
        ("train-teacher", "baseline_0.25"),
        ("distill", "kd_aux_v1_0.25"),
        ("finetune", "kd_aux_v1_0.25_ft"),
        ("eval", "eval"),
        ("ablate", "ablation"),
        ("report", "report"),
    ];
    stages
        .iter()
        .map(|(cmd, dir)| {
            let cfg = first.join(dir).join("run_config.json");
            run(&[cmd, "--config", s(&cfg), "--output-dir", s(second)])
        })
        .collect()
}

/// Every file under `root` except per-run configs and wall-clock timings.
pub fn outputs(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
                continue;
            }
            let name = p.file_name().unwrap().to_string_lossy();
            if name == "run_config.json" || name == "timing.json" {
                continue;
            }
            out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
        }
    }
    out
}

/// Paths whose bytes differ between two runs, plus files only one has.
pub fn differences(a: &Path, b: &Path) -> Vec<PathBuf> {
    let (fa, fb) = (outputs(a), outputs(b));
    let mut diff: Vec<PathBuf> = fa
        .iter()
        .filter(|(k, v)| fb.get(*k) != Some(*v))
        .map(|(k, _)| k.clone())
        .collect();
    diff.extend(fb.keys().filter(|k| !fa.contains_key(*k)).cloned());
    diff
}
