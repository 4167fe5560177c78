mod common;

use common::{model_grad_error, rng, tiny_context, tiny_model, tiny_setup};
use ndarray::Array3;
use rand::Rng;
use ratsir::autodiff::{gelu, softplus, Graph, Mat};
use ratsir::geom::BoundingBox;
use ratsir::net::*;

fn zero_weights(model: &mut Model) {
    for v in model.store.values_mut() {
        v.fill(0.0);
    }
}

fn random_crop(seed: u64, cfg: &NetConfig) -> Array3<f32> {
    let mut r = rng(seed);
    Array3::from_shape_fn((cfg.crop_h, cfg.crop_w, cfg.in_channels), |_| r.random_range(-1.0..1.0f32))
}

fn set(model: &mut Model, name: &str, value: Mat) {
    let id = model.store.find(name).unwrap_or_else(|| panic!("no parameter {name}"));
    assert_eq!(model.store.get(id).dim(), value.dim(), "{name}");
    *model.store.get_mut(id) = value;
}

#[test]
fn desk_encoder_emits_eight_by_six_tokens_of_width_64() {
    let cfg = NetConfig::desk();
    let m = Model::new(cfg.clone(), Variant::CrossSSeq, 1).unwrap();
    let crop = random_crop(1, &cfg);
    let mut g = Graph::new();
    let a = m.encode(&mut g, &crop.view()).unwrap();
    let b = m.encode(&mut g, &crop.view()).unwrap();
    assert_eq!(g.shape(a), (8 * 6, 64));
    assert_eq!(g.value(a), g.value(b));
    let wrong = Array3::<f32>::zeros((64, 40, cfg.in_channels));
    assert!(m.encode(&mut g, &wrong.view()).is_err());
}

#[test]
fn zero_everything_encodes_to_zero() {
    let cfg = NetConfig { bias: false, ..NetConfig::tiny() };
    let mut m = Model::new(cfg.clone(), Variant::CrossS, 2).unwrap();
    zero_weights(&mut m);
    let mut g = Graph::new();
    let t = m.encode(&mut g, &Array3::zeros((8, 8, cfg.in_channels)).view()).unwrap();
    assert!(g.value(t).iter().all(|&x| x == 0.0));
    let r = m.relation_mlp(&mut g, &Mat::from_elem((4, 5), 0.7)).unwrap();
    assert!(g.value(r).iter().all(|&x| x == 0.0));
    let zeros = g.constant(Mat::zeros((4, cfg.fused_dim())));
    let s = m.sir_spatial(&mut g, zeros, zeros);
    assert!(g.value(s).iter().all(|&x| x == 0.0));
}

#[test]
fn relation_mlp_shares_weights_across_patches() {
    let m = tiny_model(Variant::CrossS, 3);
    let mut inputs = Mat::from_elem((4, 5), 0.25);
    inputs.row_mut(3).fill(-0.5);
    let mut g = Graph::new();
    let r = m.relation_mlp(&mut g, &inputs).unwrap();
    let v = g.value(r);
    assert_eq!(v.dim(), (4, 8));
    assert_eq!(v.row(0), v.row(1));
    assert_eq!(v.row(0), v.row(2));
    assert_ne!(v.row(0), v.row(3));
    assert!(tiny_model(Variant::CrossSNoRat, 3).relation_mlp(&mut g, &inputs).is_err());
}

#[test]
fn relation_mlp_matches_hand_evaluation() {
    let mut m = tiny_model(Variant::CrossS, 4);
    let w1 = Mat::from_shape_fn((5, 8), |(i, j)| 0.1 * (i as f64 + 1.0) - 0.05 * j as f64);
    let b1 = Mat::from_shape_fn((1, 8), |(_, j)| 0.01 * j as f64);
    let w2 = Mat::from_shape_fn((8, 8), |(i, j)| if i == j { 1.0 } else { 0.1 });
    let b2 = Mat::from_elem((1, 8), -0.2);
    set(&mut m, "rat.mlp.fc1.w", w1.clone());
    set(&mut m, "rat.mlp.fc1.b", b1.clone());
    set(&mut m, "rat.mlp.fc2.w", w2.clone());
    set(&mut m, "rat.mlp.fc2.b", b2.clone());
    let x = [0.5, 0.5, 0.5, 0.5, 1.0];
    let hidden: Vec<f64> = (0..8)
        .map(|j| gelu((0..5).map(|i| x[i] * w1[[i, j]]).sum::<f64>() + b1[[0, j]]))
        .collect();
    let want: Vec<f64> = (0..8)
        .map(|j| (0..8).map(|i| hidden[i] * w2[[i, j]]).sum::<f64>() + b2[[0, j]])
        .collect();
    let mut g = Graph::new();
    let input = Mat::from_shape_vec((1, 5), x.to_vec()).unwrap();
    let out = m.relation_mlp(&mut g, &input).unwrap();
    for (a, b) in g.value(out).iter().zip(&want) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn rat_enhance_concatenates_channels() {
    let mut r = rng(5);
    let f = Mat::from_shape_fn((6, 4), |_| r.random_range(-1.0..1.0));
    let rel = Mat::from_shape_fn((6, 4), |_| r.random_range(-1.0..1.0));
    let mut g = Graph::new();
    let (fv, rv) = (g.input(f.clone()), g.input(rel));
    let out = Model::rat_enhance(&mut g, fv, rv);
    assert_eq!(g.shape(out), (6, 8));
    let back = g.slice_cols(out, 0, 4);
    assert_eq!(g.value(back), &f);
    let z = g.constant(Mat::zeros((6, 4)));
    let out = Model::rat_enhance(&mut g, fv, z);
    assert!(g.value(out).slice(ndarray::s![.., 4..]).iter().all(|&x| x == 0.0));
}

#[test]
fn spatial_fusion_swaps_with_the_hands() {
    let mut m = tiny_model(Variant::CrossS, 6);
    let d = m.config.fused_dim();
    let mut r = rng(6);
    let a = Mat::from_shape_fn((4, d), |_| r.random_range(-1.0..1.0));
    let b = Mat::from_shape_fn((4, d), |_| r.random_range(-1.0..1.0));
    let run = |m: &Model, x: &Mat, y: &Mat| {
        let mut g = Graph::new();
        let (xv, yv) = (g.constant(x.clone()), g.constant(y.clone()));
        let out = m.sir_spatial(&mut g, xv, yv);
        g.value(out).clone()
    };
    let before = run(&m, &a, &b);
    for name in ["sir.hand_id", "sir.queries"] {
        let id = m.store.find(name).unwrap();
        let v = m.store.get(id).clone();
        let swapped = ndarray::concatenate![ndarray::Axis(0), v.slice(ndarray::s![1..2, ..]), v.slice(ndarray::s![0..1, ..])];
        *m.store.get_mut(id) = swapped;
    }
    let after = run(&m, &b, &a);
    assert!((&before.row(0) - &after.row(1)).iter().all(|x| x.abs() < 1e-12));
    assert!((&before.row(1) - &after.row(0)).iter().all(|x| x.abs() < 1e-12));
}

#[test]
fn temporal_fusion_shapes_and_stacking() {
    let cfg = NetConfig { temporal_pos: false, ..NetConfig::desk() };
    let m = Model::new(cfg, Variant::CrossSSeq, 7).unwrap();
    let mut r = rng(7);
    let frame = Mat::from_shape_fn((2, 128), |_| r.random_range(-1.0..1.0));
    let mut g = Graph::new();
    let f = g.constant(frame);
    let stacked = m.sir_temporal_single(&mut g, f, 9).unwrap();
    let literal = m.sir_temporal(&mut g, &[f; 9]).unwrap();
    assert_eq!(stacked.len(), 9);
    for (s, l) in stacked.iter().zip(&literal) {
        assert_eq!(g.shape(*s), (2, 128));
        assert_eq!(g.value(*s), g.value(*l));
        assert!((g.value(*s) - g.value(stacked[0])).iter().all(|x| x.abs() < 1e-12));
    }
    assert!(m.sir_temporal(&mut g, &[f; 10]).is_err());
}

#[test]
fn regression_head_degenerate_and_fuzzed() {
    let cfg = NetConfig::tiny();
    let mut m = Model::new(cfg.clone(), Variant::CrossS, 8).unwrap();
    let d = cfg.fused_dim();
    let mut r = rng(8);
    let mut g = Graph::new();
    for _ in 0..1000 {
        let feat = g.constant(Mat::from_shape_fn((2, d), |_| r.random_range(-50.0..50.0)));
        let row = m.regress(&mut g, feat);
        assert!(g.value(row).iter().all(|x| x.is_finite()));
    }
    assert_eq!(OUTPUT_DIM, 2 * (48 + 10 + 3) + 3);

    zero_weights(&mut m);
    let mut g = Graph::new();
    let feat = g.constant(Mat::zeros((2, d)));
    let row = m.regress(&mut g, feat);
    let p = Prediction::from_row(g.value(row).as_slice().unwrap()).unwrap();
    assert!(p.theta_r.iter().chain(&p.theta_l).chain(&p.beta_r).chain(&p.beta_l).all(|&x| x == 0.0));
    assert_eq!(p.upsilon, [0.0; 3]);
    assert_eq!(p.cam_r.scale, cfg.k_unit * softplus(0.0));
    assert_eq!(p.cam_l.scale, cfg.k_unit * softplus(0.0));
}

#[test]
fn separated_attention_ignores_the_other_crop_when_far_apart() {
    let cfg = NetConfig { cross_hand_attention: false, ..NetConfig::tiny() };
    let m = Model::new(cfg.clone(), Variant::CrossS, 9).unwrap();
    let box_r = BoundingBox::new(100.0, 100.0, 40.0, 40.0);
    let box_l = BoundingBox::new(100.0 + 1e5, 100.0, 40.0, 40.0);
    let frame = |crop_l| FrameInput {
        crop_r: random_crop(1, &cfg),
        crop_l,
        box_r,
        box_l,
        crop_union: None,
    };
    let a = m.predict(&[frame(random_crop(2, &cfg))]).unwrap();
    let b = m.predict(&[frame(random_crop(3, &cfg))]).unwrap();
    let diff = a[0].theta_r.iter().zip(&b[0].theta_r).fold(0.0f64, |w, (x, y)| w.max((x - y).abs()));
    assert!(diff < 1e-12, "{diff}");
    assert_ne!(a[0].theta_l, b[0].theta_l);
}

#[test]
fn checkpoints_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let m = tiny_model(Variant::CrossSSeq, 10);
    save_model(&m, dir.path()).unwrap();
    let back = load_model(dir.path()).unwrap();
    assert_eq!(back.variant, m.variant);
    assert_eq!(back.config, m.config);
    for (a, b) in back.store.values().iter().zip(m.store.values()) {
        assert!((a - b).iter().all(|x| x.abs() <= 1e-6 * 4.0));
    }
    let again = tempfile::tempdir().unwrap();
    save_model(&back, again.path()).unwrap();
    let twice = load_model(again.path()).unwrap();
    assert_eq!(twice.store.values(), back.store.values());
}

#[test]
fn patchify_orders_rows_then_columns() {
    let crop = Array3::from_shape_fn((4, 4, 1), |(y, x, _)| (10 * y + x) as f32);
    let p = patchify(&crop.view(), 2).unwrap();
    assert_eq!(p.dim(), (4, 4));
    assert_eq!(p.row(1).to_vec(), vec![2.0, 3.0, 12.0, 13.0]);
    assert!(patchify(&crop.view(), 3).is_err());
}

fn gradient_sweep(variant: Variant) {
    let (_, hands, sample) = tiny_setup(3);
    let mut model = tiny_model(variant, 11);
    let ctx = tiny_context(&hands);
    // Exactly-zero gradients (key biases under softmax) leave only roundoff of
    // order 1e-9 in the differences, hence the denominator floor.
    let rep = model_grad_error(&mut model, &ctx, &sample, 1e-5, 1e-4);
    assert!(rep.count > 1000);
    assert!(rep.worst < 1e-4, "{variant}: worst relative error {:.3e} over {} weights at {:?}", rep.worst, rep.count, rep.at);
}

#[test]
fn baseline_gradients_match_finite_differences() {
    gradient_sweep(Variant::Baseline);
}

#[test]
fn holistic_gradients_match_finite_differences() {
    gradient_sweep(Variant::CrossH);
}
