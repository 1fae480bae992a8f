mod support;

use std::process::Command;

use resdistill::config::RunConfig;
use support::{differences, pipeline, replay, run, write_config};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_resdistill"))
}

#[test]
fn exit_codes() {
    let out = bin().arg("--bogus").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(bin().output().unwrap().status.code(), Some(1));
    assert_eq!(bin().arg("--help").output().unwrap().status.code(), Some(0));
    assert_eq!(
        bin().args(["flops", "--mag", "3"]).output().unwrap().status.code(),
        Some(1)
    );
    assert_eq!(
        bin()
            .args(["eval", "--precision", "f16"])
            .output()
            .unwrap()
            .status
            .code(),
        Some(1)
    );
    assert_eq!(run(&["report", "--config", "/nonexistent/config.json"]), 1);
    assert_eq!(run(&["gen-data", "--patients", "1"]), 1);

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let res = bin()
        .args(["distill", "--quiet", "--output-dir", out])
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(2));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("teacher") && err.contains("model.ckpt"), "{err}");
    assert_eq!(run(&["report", "--output-dir", out]), 2);
}

#[test]
fn flops_prints_reduction_factor() {
    let out = bin()
        .args(["flops", "--mag", "0.125", "--base-size", "256"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let factor: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("reduction factor: "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((60.0..=68.0).contains(&factor), "{text}");
    assert!(text.contains("(32x32)"), "{text}");
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(
        &cfg,
        r#"{"seed": 5, "jobs": 3, "distill": {"temperature": 2.0, "epochs": 7}}"#,
    )
    .unwrap();
    let data = dir.path().join("data");
    let code = run(&[
        "gen-data",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "11",
        "--data-dir",
        data.to_str().unwrap(),
        "--patients",
        "12",
        "--base-size",
        "16",
        "--precision",
        "f64",
    ]);
    assert_eq!(code, 0);
    let saved = RunConfig::load(&data.join("run_config.json")).unwrap();
    assert_eq!(saved.seed, 11);
    assert_eq!(saved.dataset.seed, 11);
    assert_eq!(saved.jobs, 3);
    assert_eq!(saved.distill.temperature, 2.0);
    assert_eq!(saved.distill.epochs, 7);
    assert_eq!(saved.dataset.synth.num_patients, 12);
    assert_eq!(saved.precision, resdistill::tensor::DType::F64);
    assert_eq!(saved.eval, RunConfig::default().eval);
}

#[test]
fn gen_data_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for d in [&a, &b] {
        assert_eq!(
            run(&[
                "gen-data",
                "--config",
                cfg.to_str().unwrap(),
                "--data-dir",
                d.to_str().unwrap()
            ]),
            0
        );
    }
    assert!(differences(&a, &b).is_empty());
    let c = dir.path().join("c");
    run(&[
        "gen-data",
        "--config",
        cfg.to_str().unwrap(),
        "--data-dir",
        c.to_str().unwrap(),
        "--seed",
        "1",
    ]);
    assert!(!differences(&a, &c).is_empty());
}

#[test]
fn full_pipeline_replays_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let data = dir.path().join("data");
    let first = dir.path().join("first");
    let codes = pipeline(&cfg, &data, &first);
    assert!(codes.iter().all(|&c| c == 0), "{codes:?}");
    for f in [
        "teacher/model.ckpt",
        "baseline_0.25/artifact.json",
        "kd_aux_v1_0.25/trace.csv",
        "kd_aux_v1_0.25_ft/model.ckpt",
        "eval/baseline_1.json",
        "eval/kd_aux_v1_0.25.json",
        "eval/kd_aux_v1_ft_0.25.json",
        "ablation/ablation.csv",
        "report/report.json",
        "report/tradeoff.svg",
    ] {
        assert!(first.join(f).is_file(), "missing {f}");
    }
    let second = dir.path().join("second");
    let codes = replay(&first, &second);
    assert!(codes.iter().all(|&c| c == 0), "{codes:?}");
    let diff = differences(&first, &second);
    assert!(diff.is_empty(), "{diff:?}");
}
