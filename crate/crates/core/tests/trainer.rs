mod common;

use ndarray::Array3;
use ratsir::error::Error;
use ratsir::net::{ForwardOptions, Model, NetConfig, Variant};
use ratsir::synthdata::{generate_samples, DataConfig, SequenceSample};
use ratsir::trainer::*;

fn tiny_data(count: usize) -> (DataConfig, Vec<SequenceSample>) {
    frames_data(count, 2)
}

/// Acceleration needs three frames, longer than the tiny temporal window, so
/// scoring tests use the per-frame baseline.
fn frames_data(count: usize, seq_len: usize) -> (DataConfig, Vec<SequenceSample>) {
    let cfg = DataConfig {
        count,
        seq_len,
        crop_h: 8,
        crop_w: 8,
        n_vertices: 60,
        interaction: [1.0, 1.0],
        ..DataConfig::default()
    };
    let samples = generate_samples(&cfg).unwrap();
    (cfg, samples)
}

fn tiny_train(steps: usize) -> TrainConfig {
    TrainConfig {
        profile: "tiny".into(),
        steps,
        batch: 2,
        lr0: 3e-3,
        ..TrainConfig::default()
    }
}

#[test]
fn schedule_is_linear_and_ends_at_zero() {
    let cfg = tiny_train(8);
    let lrs: Vec<f64> = (0..=8).map(|s| cfg.lr(s)).collect();
    assert_eq!(lrs[0], 3e-3);
    assert_eq!(lrs[8], 0.0);
    for w in lrs.windows(2) {
        assert!(w[1] < w[0]);
        assert!((w[0] - w[1] - 3e-3 / 8.0).abs() < 1e-15);
    }
}

#[test]
fn log_has_one_line_per_step() {
    let (data, samples) = tiny_data(3);
    let (_, logs) = train(&tiny_train(5), &data, &samples).unwrap();
    assert_eq!(logs.len(), 5);
    for (i, l) in logs.iter().enumerate() {
        assert_eq!(l.step, i);
        assert_eq!(l.lr, lr_at(3e-3, i, 5));
        assert!(l.loss.total.is_finite() && l.grad_norm.is_finite());
    }
}

#[test]
fn same_seed_gives_identical_weights() {
    let (data, samples) = tiny_data(3);
    let (a, _) = train(&tiny_train(4), &data, &samples).unwrap();
    let (b, _) = train(&tiny_train(4), &data, &samples).unwrap();
    assert_eq!(a.store.values(), b.store.values());
    let (c, _) = train(&TrainConfig { seed: 1, ..tiny_train(4) }, &data, &samples).unwrap();
    assert_ne!(a.store.values(), c.store.values());
}

#[test]
fn resume_matches_continuous_training() {
    let (data, samples) = tiny_data(3);
    let (straight, _) = train(&tiny_train(6), &data, &samples).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let mut first = Trainer::new(tiny_train(6), &data).unwrap();
    for _ in 0..3 {
        first.train_step(&samples).unwrap();
    }
    first.save(dir.path()).unwrap();
    let mut resumed = Trainer::resume(dir.path(), &data, None).unwrap();
    assert_eq!(resumed.step, 3);
    assert_eq!(resumed.optimizer, first.optimizer);
    resumed.run(&samples, |_| {}).unwrap();
    assert_eq!(resumed.model.store.values(), straight.store.values());
}

#[test]
fn resume_with_no_steps_left_is_a_no_op() {
    let (data, samples) = tiny_data(2);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut t = Trainer::new(tiny_train(2), &data).unwrap();
    t.run(&samples, |_| {}).unwrap();
    t.save(a.path()).unwrap();
    let mut again = Trainer::resume(a.path(), &data, None).unwrap();
    let mut count = 0;
    again.run(&samples, |_| count += 1).unwrap();
    assert_eq!(count, 0);
    again.save(b.path()).unwrap();
    for name in [TRAINER_STATE, OPTIMIZER_BLOB] {
        assert_eq!(std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap());
    }
}

#[test]
fn resume_rejects_mismatched_data() {
    let (data, samples) = tiny_data(1);
    let dir = tempfile::tempdir().unwrap();
    let mut t = Trainer::new(tiny_train(1), &data).unwrap();
    t.run(&samples, |_| {}).unwrap();
    t.save(dir.path()).unwrap();
    let wrong = DataConfig { crop_h: 16, ..data.clone() };
    assert!(matches!(Trainer::resume(dir.path(), &wrong, None), Err(Error::InvalidArgument(_))));
    std::fs::write(dir.path().join(OPTIMIZER_BLOB), b"short").unwrap();
    assert!(matches!(Trainer::resume(dir.path(), &data, None), Err(Error::DataIntegrity(_))));
}

#[test]
fn bad_configs_are_rejected() {
    let (data, _) = tiny_data(1);
    for cfg in [
        TrainConfig { lr0: 0.0, ..tiny_train(1) },
        TrainConfig { steps: 0, ..tiny_train(1) },
        TrainConfig { beta2: 1.0, ..tiny_train(1) },
        TrainConfig { profile: "huge".into(), ..tiny_train(1) },
        TrainConfig { profile: "compact".into(), ..tiny_train(1) },
    ] {
        assert!(Trainer::new(cfg, &data).is_err());
    }
    let long = DataConfig { seq_len: 3, ..data };
    assert!(Trainer::new(tiny_train(1), &long).is_err());
    assert!(Trainer::new(TrainConfig { variant: Variant::Baseline, ..tiny_train(1) }, &long).is_ok());
}

#[test]
fn divergence_is_reported() {
    let (data, samples) = tiny_data(2);
    let cfg = TrainConfig { lr0: 1e300, ..tiny_train(5) };
    match train(&cfg, &data, &samples) {
        Err(Error::Divergence { step, .. }) => assert!(step > 0),
        other => panic!("expected divergence, got {:?}", other.map(|(_, l)| l.len())),
    }
}

#[test]
fn variant_list_and_names() {
    assert_eq!(Variant::ALL.len(), 5);
    for v in Variant::ALL {
        assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
    }
    assert!("cross_x".parse::<Variant>().is_err());
}

#[test]
fn disabled_relation_matches_the_plain_variant() {
    let (_, samples) = tiny_data(2);
    let plain = Model::new(NetConfig::tiny(), Variant::CrossSNoRat, 5).unwrap();
    let rat = Model::new(NetConfig::tiny(), Variant::CrossS, 5).unwrap();
    let zero = ForwardOptions { zero_relation: true };
    for s in &samples {
        let inputs = s.inputs();
        assert_eq!(plain.predict(&inputs).unwrap(), rat.predict_with(&inputs, &zero).unwrap());
        assert_ne!(plain.predict(&inputs).unwrap(), rat.predict(&inputs).unwrap());
    }
}

#[test]
fn baseline_right_hand_ignores_left_crop() {
    let (_, samples) = tiny_data(1);
    let model = Model::new(NetConfig::tiny(), Variant::Baseline, 2).unwrap();
    let inputs = samples[0].inputs();
    let mut scrambled = inputs.clone();
    for f in &mut scrambled {
        f.crop_l = Array3::from_shape_fn(f.crop_l.dim(), |(r, c, k)| ((r * 7 + c * 3 + k) % 5) as f32 / 4.0);
        f.box_l.cx += 3.0;
    }
    let (a, b) = (model.predict(&inputs).unwrap(), model.predict(&scrambled).unwrap());
    for (p, q) in a.iter().zip(&b) {
        assert_eq!(p.theta_r, q.theta_r);
        assert_eq!(p.beta_r, q.beta_r);
        assert_eq!(p.cam_r, q.cam_r);
        assert_ne!(p.theta_l, q.theta_l);
    }
}

#[test]
fn ground_truth_scores_perfectly() {
    let (data, samples) = frames_data(3, 4);
    let hands = data.hand_model().unwrap();
    let preds: Vec<_> = samples.iter().map(|s| s.frames.iter().map(|f| f.gt(false)).collect()).collect();
    let report = evaluate_predictions(&hands, &samples, &preds).unwrap();
    let m = &report.mean;
    // Stored world joints are f32, so "zero" means zero to storage precision.
    assert!(m.mpjpe_mm < 1e-5 && m.mpvpe_mm < 1e-5 && m.mrrpe_mm < 1e-5 && m.accel_e_mm_s2 < 1e-2, "{m:?}");
    // Only the threshold-0 grid point misses.
    assert!(m.auc > 1.0 - 1.0 / 99.0, "{m:?}");
}

#[test]
fn mean_is_the_average_of_sequences() {
    let (data, samples) = frames_data(3, 4);
    let hands = data.hand_model().unwrap();
    let model = Model::new(NetConfig::tiny(), Variant::Baseline, 3).unwrap();
    let report = evaluate(&model, &hands, &samples).unwrap();
    assert_eq!(report.sequences.len(), 3);
    let n = 3.0;
    let avg = |f: fn(&SequenceMetrics) -> f64| report.sequences.iter().map(f).sum::<f64>() / n;
    assert!((report.mean.mpjpe_mm - avg(|s| s.report.mpjpe_mm)).abs() < 1e-9);
    assert!((report.mean.mrrpe_mm - avg(|s| s.report.mrrpe_mm)).abs() < 1e-9);
    assert!((report.mean.auc - avg(|s| s.report.auc)).abs() < 1e-12);
    for s in &report.sequences {
        let frames = s.per_frame_mpjpe_mm.iter().sum::<f64>() / s.per_frame_mpjpe_mm.len() as f64;
        assert!((frames - s.report.mpjpe_mm).abs() < 1e-9);
    }
    assert!((report.frame_mpjpe(1) - avg(|s| s.per_frame_mpjpe_mm[1])).abs() < 1e-9);
}

#[test]
fn small_set_loss_halves_within_500_steps() {
    let (data, samples) = tiny_data(4);
    let mut t = Trainer::new(TrainConfig { steps: 500, batch: 4, ..tiny_train(500) }, &data).unwrap();
    let first = t.train_step(&samples).unwrap().loss.total;
    let mut best = first;
    while t.step < 500 && best > 0.5 * first {
        best = best.min(t.train_step(&samples).unwrap().loss.total);
    }
    assert!(best <= 0.5 * first, "loss {first} -> {best} after {} steps", t.step);
}
