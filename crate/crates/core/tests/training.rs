mod common;

use common::fixture;
use resdistill::data::{ChannelStats, LabeledView, MagTag, Split};
use resdistill::distill::{
    accuracy, distill_loss_values, distill_student, fine_tune, predict_view, run_ablation, train_teacher, AblationRow,
    DistillConfig,
};
use resdistill::model::Model;
use resdistill::resize::ResizeMode;
use resdistill::seed;
use resdistill::tensor::Tensor;

#[test]
fn freezing_label_blindness_and_teacher_immutability() {
    let dir = tempfile::tempdir().unwrap();
    common::assert_all(&common::freezing_checks(dir.path()).unwrap());
}

#[test]
fn identical_models_at_equal_magnification_give_zero_loss() {
    let model = Model::<f64>::build(&common::tiny_model_config(), 9).unwrap();
    let mut r = seed::rng(9, "fixed-point");
    for mode in ResizeMode::ALL {
        let x = common::rand_tensor(&[1, 3, 12, 12], &mut r, -1.0, 1.0);
        let out = model.infer(&x).unwrap();
        let cfg = DistillConfig {
            resize_mode: mode,
            ..DistillConfig::default()
        };
        let (_, soft, pixel) = distill_loss_values(&out, &out, &cfg).unwrap();
        assert_eq!(soft, 0.0, "{mode:?}");
        assert!(pixel <= 1e-10, "{mode:?}: {pixel}");
    }
}

#[test]
fn soft_loss_temperature_sweep_is_nonnegative_and_shift_invariant() {
    let mut r = seed::rng(1, "sweep");
    for temp in [1.0, 2.0, 4.0, 8.0] {
        for _ in 0..25 {
            let t = common::rand_tensor(&[2, 3], &mut r, -5.0, 5.0);
            let s = common::rand_tensor(&[2, 3], &mut r, -5.0, 5.0);
            let l = resdistill::tensor::soft_loss(&t, &s, temp).unwrap().item().unwrap();
            assert!(l >= 0.0);
            let shifted = Tensor::new(vec![2, 3], t.data().iter().map(|v| v + 1.7).collect()).unwrap();
            let z = resdistill::tensor::soft_loss(&t, &shifted, temp)
                .unwrap()
                .item()
                .unwrap();
            assert!(z.abs() < 1e-12, "T={temp}: {z}");
        }
    }
}

#[test]
fn head_fine_tune_separates_linearly_separable_features() {
    // Labels come from a random linear head on a frozen random backbone, so
    // a linear head that fits them exists. Only samples with a clear margin
    // are kept.
    let cfg = fixture::model();
    let oracle = Model::<f32>::build(&cfg, 77).unwrap();
    let stats = ChannelStats {
        mean: vec![0.5; 3],
        std: vec![0.25; 3],
    };
    let recs = resdistill::data::generate(
        &resdistill::data::SynthConfig {
            num_patients: 60,
            base_size: 16,
            blob_period: 6.0,
            ..Default::default()
        },
        4,
    )
    .unwrap();
    let mut view = LabeledView {
        ids: vec![],
        images: vec![],
        labels: vec![],
        stats: stats.clone(),
    };
    for rec in recs {
        let x = stats.apply::<f32>(&rec.image).unwrap().unsqueeze0();
        let logits = oracle.infer(&x).unwrap().logits;
        let mut sorted: Vec<f32> = logits.data().to_vec();
        sorted.sort_by(f32::total_cmp);
        if sorted[2] - sorted[1] > 0.05 {
            view.labels.push(resdistill::model::argmax(logits.data()));
            view.ids.push(rec.id);
            view.images.push(rec.image);
        }
    }
    assert!(view.len() >= 30, "only {} samples kept", view.len());

    let mut student = oracle.clone();
    for (k, id) in student.head_ids().into_iter().enumerate() {
        let p = student.params_mut().get_mut(id);
        let n = p.value.numel();
        let fresh = common::rand_tensor(&[n], &mut seed::rng(k as u64, "head"), -0.1, 0.1);
        p.value = Tensor::new(
            p.value.shape().to_vec(),
            fresh.data().iter().map(|&v| v as f32).collect(),
        )
        .unwrap();
    }
    let train_cfg = resdistill::distill::TrainConfig {
        epochs: 300,
        augment: false,
        patience: None,
        ..fixture::train(0)
    };
    let (tuned, _) = fine_tune(student, &view, &view, &train_cfg, &fixture::augment()).unwrap();
    let acc = accuracy(&predict_view(&tuned, &view).unwrap(), &view.labels);
    assert_eq!(acc, 100.0);
}

#[test]
fn distillation_replays_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let ds = fixture::dataset(&dir.path().join("data"));
    let (teacher, _) = train_teacher::<f32>(
        &fixture::model(),
        &ds.labeled(Split::Train, MagTag::BASE).unwrap(),
        &ds.labeled(Split::Validation, MagTag::BASE).unwrap(),
        &fixture::train(2),
        &fixture::augment(),
    )
    .unwrap();
    let cfg = fixture::distill(2);
    let dev = ds.labeled(Split::Development, cfg.student_mag).unwrap();
    let pool = ds.unlabeled(cfg.pool, cfg.teacher_mag, cfg.student_mag).unwrap();
    let mut files = Vec::new();
    for run in ["a", "b"] {
        let (m, r) = distill_student(&teacher, &pool, &dev, &cfg, &fixture::augment()).unwrap();
        let out = dir.path().join(run);
        r.write(&out, &m).unwrap();
        files.push(["model.ckpt", "trace.csv", "phase.json"].map(|f| std::fs::read(out.join(f)).unwrap()));
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn ablation_grid_shape_and_plain_kd_rows() {
    let dir = tempfile::tempdir().unwrap();
    let ds = fixture::dataset(dir.path());
    let (teacher, _) = train_teacher::<f32>(
        &fixture::model(),
        &ds.labeled(Split::Train, MagTag::BASE).unwrap(),
        &ds.labeled(Split::Validation, MagTag::BASE).unwrap(),
        &fixture::train(2),
        &fixture::augment(),
    )
    .unwrap();
    let base = DistillConfig {
        augment: false,
        ..fixture::distill(2)
    };
    let mags = [fixture::low(), MagTag::new(0.5).unwrap()];
    let seeds = [0, 1];
    let rows = run_ablation(
        &ds,
        &teacher,
        &base,
        &fixture::augment(),
        &mags,
        &ResizeMode::ALL,
        &seeds,
        1,
    )
    .unwrap();
    assert_eq!(rows.len(), mags.len() * ResizeMode::ALL.len() * seeds.len());
    let parallel = run_ablation(
        &ds,
        &teacher,
        &base,
        &fixture::augment(),
        &mags,
        &ResizeMode::ALL,
        &seeds,
        3,
    )
    .unwrap();
    assert_eq!(rows, parallel);

    for row in rows.iter().filter(|r| r.mode == ResizeMode::None) {
        let cfg = DistillConfig {
            resize_mode: ResizeMode::None,
            student_mag: row.magnification,
            seed: row.seed,
            ..base.clone()
        };
        assert_eq!(cfg, row.config);
        let pool = ds.unlabeled(cfg.pool, cfg.teacher_mag, cfg.student_mag).unwrap();
        let dev = ds.labeled(Split::Development, cfg.student_mag).unwrap();
        let (_, r) = distill_student(&teacher, &pool, &dev, &cfg, &fixture::augment()).unwrap();
        assert_eq!(r.fingerprint, row.fingerprint);
        assert_eq!(r.best().dev_accuracy, row.dev_accuracy);
        assert_eq!(r.best_epoch, row.best_epoch);
    }
    let csv = AblationRow::csv(&rows);
    assert_eq!(csv.lines().count(), rows.len() + 1);
}
