use ndarray::{array, Array2, Array3, Axis};
use ratsir::error::Error;
use ratsir::geom::{position_map, relative_distance_map, BoundingBox, DEFAULT_TAU};
use ratsir::handkin::Side;
use ratsir::synthdata::*;

fn small(count: usize) -> DataConfig {
    DataConfig {
        count,
        crop_h: 32,
        crop_w: 24,
        n_vertices: 120,
        ..DataConfig::default()
    }
}

#[test]
fn generation_is_deterministic() {
    let cfg = small(3);
    assert_eq!(generate_samples(&cfg).unwrap(), generate_samples(&cfg).unwrap());
    let other = generate_samples(&DataConfig { seed: 1, ..cfg }).unwrap();
    assert_ne!(other[0].frames[0].params_r, generate_samples(&small(1)).unwrap()[0].frames[0].params_r);
}

#[test]
fn zero_interaction_keeps_boxes_far_apart() {
    let cfg = DataConfig { interaction: [0.0, 0.0], ..small(20) };
    for s in generate_samples(&cfg).unwrap() {
        for f in &s.frames {
            let gap = ((f.box_r.cx - f.box_l.cx).powi(2) + (f.box_r.cy - f.box_l.cy).powi(2)).sqrt();
            assert!(gap > 4.0 * f.box_r.sx.max(f.box_l.sx), "gap {gap} vs widths {} {}", f.box_r.sx, f.box_l.sx);
        }
    }
}

#[test]
fn poses_change_smoothly_between_frames() {
    for s in generate_samples(&small(30)).unwrap() {
        for pair in s.frames.windows(2) {
            for (a, b) in [(&pair[0].params_r, &pair[1].params_r), (&pair[0].params_l, &pair[1].params_l)] {
                let d = a.theta.iter().zip(&b.theta).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
                assert!(d < 0.2, "pose step {d}");
            }
        }
    }
}

#[test]
fn relative_root_matches_stored_joints() {
    for s in generate_samples(&small(5)).unwrap() {
        for f in &s.frames {
            let gt = f.gt(false);
            for c in 0..3 {
                assert_eq!(gt.upsilon[c], f.j_l[[0, c]] - f.j_r[[0, c]]);
            }
        }
    }
}

#[test]
fn ground_truth_is_self_consistent() {
    let cfg = small(4);
    let hands = cfg.hand_model().unwrap();
    for s in generate_samples(&cfg).unwrap() {
        s.check_consistency(&hands).unwrap();
        let mut bad = s.clone();
        bad.frames[2].j_l[[5, 1]] += 1e-3;
        assert!(matches!(bad.check_consistency(&hands), Err(Error::DataIntegrity(_))));
    }
}

#[test]
fn render_examples() {
    let b = BoundingBox::new(100.0, 50.0, 24.0, 32.0);
    let center = array![[100.0, 50.0]];
    let crop = render_crop(&[Splat { j2d: &center, depth: &[0.0] }], &b, 32, 24).unwrap();
    let ch = crop.index_axis(Axis(2), 0);
    let (mut best, mut at) = (f32::MIN, (0, 0));
    for ((r, c), &v) in ch.indexed_iter() {
        if v > best {
            best = v;
            at = (r, c);
        }
    }
    // The center falls on the corner shared by the four middle pixels.
    assert!((15..=16).contains(&at.0) && (11..=12).contains(&at.1), "{at:?}");
    assert!(crop.iter().all(|&v| (0.0..=1.0).contains(&v)));

    let outside = array![[1000.0, 1000.0]];
    let empty = render_crop(&[Splat { j2d: &outside, depth: &[0.0] }], &b, 32, 24).unwrap();
    assert!(empty.iter().all(|&v| v == 0.0));

    let twice = array![[100.5, 50.5], [100.5, 50.5]];
    let both = render_crop(&[Splat { j2d: &twice, depth: &[0.0, 0.0] }], &b, 32, 24).unwrap();
    assert_eq!(both.iter().fold(0.0f32, |m, &v| m.max(v)), 1.0);

    assert!(render_crop(&[], &BoundingBox::new(0.0, 0.0, 0.0, 10.0), 32, 24).is_err());
}

#[test]
fn occlusion_examples() {
    let s = &generate_samples(&small(1)).unwrap()[0];
    let none = inject_occlusion(s, &Occlusion::PatchMask { fraction: 0.0 }, 3);
    assert_eq!(&none, s);

    let mode = Occlusion::FrameBlackout { frames: vec![4], target: Target::Left };
    let out = inject_occlusion(s, &mode, 5);
    assert!(out.frames[4].crop_l.iter().all(|&v| v == 0.0));
    assert_eq!(out.frames[4].crop_r, s.frames[4].crop_r);
    for (a, b) in out.frames.iter().zip(&s.frames) {
        assert_eq!(a.params_l, b.params_l);
        assert_eq!(a.j_l, b.j_l);
        assert_eq!(a.v_l, b.v_l);
        assert_eq!(a.j2d_l, b.j2d_l);
        assert_eq!(a.box_l, b.box_l);
    }
    assert_eq!(out.frames[3], s.frames[3]);

    let patch = Occlusion::PatchMask { fraction: 0.5 };
    assert_eq!(inject_occlusion(s, &patch, 9), inject_occlusion(s, &patch, 9));
    assert_ne!(&inject_occlusion(s, &patch, 9), s);
}

#[test]
fn dataset_round_trip_and_corruption() {
    let cfg = small(6);
    let dir = tempfile::tempdir().unwrap();
    let manifest = make_dataset(&cfg, dir.path()).unwrap();
    assert_eq!(manifest.samples.len(), 6);
    assert_eq!(cfg.source_frames(), 41);
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back.samples, generate_samples(&cfg).unwrap());
    assert_eq!(back.manifest, manifest);

    // Same config, second directory: identical bytes.
    let dir2 = tempfile::tempdir().unwrap();
    make_dataset(&cfg, dir2.path()).unwrap();
    for name in [DATA_MANIFEST, DATA_BLOB] {
        assert_eq!(std::fs::read(dir.path().join(name)).unwrap(), std::fs::read(dir2.path().join(name)).unwrap());
    }

    let blob = dir.path().join(DATA_BLOB);
    let bytes = std::fs::read(&blob).unwrap();
    std::fs::write(&blob, &bytes[..bytes.len() - 4]).unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(Error::DataIntegrity(_))));
    let mut flipped = bytes.clone();
    flipped[100] ^= 1;
    std::fs::write(&blob, &flipped).unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(Error::DataIntegrity(_))));
}

#[test]
fn flip_examples() {
    let crop = Array3::from_shape_fn((4, 3, 2), |(r, c, k)| (r * 10 + c * 2 + k) as f32);
    let b = BoundingBox::new(120.0, 80.0, 30.0, 40.0);
    let once = flip_single_hand(&crop, &b, Side::Left, 640.0);
    assert_eq!(once.side, Side::Right);
    assert_eq!(once.bbox.cx, 520.0);
    assert_eq!(once.crop[[1, 0, 1]], crop[[1, 2, 1]]);
    let twice = flip_single_hand(&once.crop, &once.bbox, once.side, 640.0);
    assert_eq!(twice.crop, crop);
    assert_eq!(twice.bbox, b);
    assert_eq!(twice.side, Side::Left);

    let (ch, cs) = (position_map(&once.bbox, 8, 6).unwrap(), position_map(&once.sentinel, 8, 6).unwrap());
    for (from, to, s) in [(&ch, &cs, &once.bbox), (&cs, &ch, &once.sentinel)] {
        let d = relative_distance_map(from, to, (s.sx, s.sy), DEFAULT_TAU).unwrap();
        assert!(d.values.iter().all(|&v| v < 1e-6 || v > 1.0 - 1e-6));
    }

    let pts: Array2<f64> = array![[10.0, 5.0], [639.0, 7.0]];
    let m = flip_points(&pts, 640.0);
    assert_eq!(m, array![[630.0, 5.0], [1.0, 7.0]]);
}
