use hopfir::data::{
    load_dataset, read_csv, read_hfp, save_dataset, synth_dataset, write_csv, write_hfp, Camera, DataFormat, Dataset,
    PoseSample, BONES,
};
use hopfir::skeleton::SkeletonGraph;
use hopfir::Error;
use proptest::prelude::*;

fn quantized(mut d: Dataset) -> Dataset {
    d.samples.iter_mut().for_each(PoseSample::quantize_f32);
    d
}

fn camera() -> Camera {
    Camera { fx: 1150.0, fy: 1150.0, cx: 512.0, cy: 500.0, width: 1000.0, height: 1002.0 }
}

#[test]
fn synthetic_data_is_valid_and_seeded() {
    let g = SkeletonGraph::human36m(3);
    let a = synth_dataset(50, 3, &g).unwrap();
    a.validate(&g).unwrap();
    assert_eq!(a, synth_dataset(50, 3, &g).unwrap());
    assert_ne!(a, synth_dataset(50, 4, &g).unwrap());
    // a prefix of a larger draw is the smaller draw
    let b = synth_dataset(80, 3, &g).unwrap();
    assert_eq!(b.samples[..50], a.samples[..]);
    assert!(a.samples.iter().all(|s| s.action.as_deref() == Some("synthetic")));
    let x = a.batch::<f64>(&(0..50).collect::<Vec<_>>()).unwrap().0;
    assert!(x.data().iter().all(|v| v.abs() < 1.5));
}

#[test]
fn files_round_trip_through_disk() {
    let g = SkeletonGraph::human36m(3);
    let dir = tempfile::tempdir().unwrap();
    let mut d = quantized(synth_dataset(7, 1, &g).unwrap());
    d.samples[3].action = None;
    for (name, format) in [("d.hfp", DataFormat::HfpBinary), ("d.csv", DataFormat::Csv)] {
        let path = dir.path().join(name);
        assert_eq!(DataFormat::from_path(&path), format);
        save_dataset(&path, format, &d).unwrap();
        assert_eq!(load_dataset(&path, format, &g).unwrap(), d);
    }
}

#[test]
fn empty_files_are_empty_datasets() {
    let g = SkeletonGraph::human36m(3);
    let dir = tempfile::tempdir().unwrap();
    for (name, format) in [("e.hfp", DataFormat::HfpBinary), ("e.csv", DataFormat::Csv)] {
        let path = dir.path().join(name);
        std::fs::write(&path, b"").unwrap();
        let d = load_dataset(&path, format, &g).unwrap();
        assert!(d.is_empty());
        assert_eq!(d.joints, 16);
    }
}

#[test]
fn malformed_files_are_data_errors() {
    let g = SkeletonGraph::human36m(3);
    let d = synth_dataset(3, 0, &g).unwrap();
    let bytes = write_hfp(&d);
    assert!(matches!(read_hfp(&bytes[..bytes.len() - 3]), Err(Error::Data(_))));
    assert!(matches!(read_hfp(b"NOPE0000"), Err(Error::Data(_))));
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(read_hfp(&extra).is_err());
    let csv = String::from_utf8(write_csv(&d).unwrap()).unwrap();
    assert!(read_csv(csv.replace("j0x2", "jx").as_bytes()).is_err());
    let bad = csv.lines().take(2).collect::<Vec<_>>().join("\n").replacen(",", ",oops,", 1);
    assert!(read_csv(bad.as_bytes()).is_err());

    // wrong joint count for the skeleton, named with the path
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("small.hfp");
    let small = SkeletonGraph::build(3, &[(0, 1), (1, 2)], 0, 2).unwrap();
    let s = PoseSample { joints2d: vec![0.0; 6], joints3d: vec![0.0, 0.0, 0.0, 0.1, 0.0, 0.0, 0.2, 0.0, 0.0], action: None };
    save_dataset(&path, DataFormat::HfpBinary, &Dataset::new(3, vec![s]).unwrap()).unwrap();
    let err = load_dataset(&path, DataFormat::HfpBinary, &g).unwrap_err().to_string();
    assert!(err.contains("small.hfp") && err.contains("skeleton"), "{err}");
    assert!(!err.contains("data: data:"), "{err}");
    load_dataset(&path, DataFormat::HfpBinary, &small).unwrap();
}

#[test]
fn validation_catches_bad_samples() {
    let g = SkeletonGraph::human36m(3);
    let mut d = synth_dataset(2, 0, &g).unwrap();
    d.samples[0].joints3d[0] = 0.5;
    assert!(d.validate(&g).is_err());
    let mut d = synth_dataset(2, 0, &g).unwrap();
    d.samples[1].joints2d[4] = f64::INFINITY;
    assert!(d.validate(&g).is_err());
    assert!(Dataset::new(16, vec![PoseSample { joints2d: vec![0.0; 4], joints3d: vec![0.0; 6], action: None }]).is_err());
    assert!(d.batch::<f64>(&[5]).is_err());
}

#[test]
fn camera_normalization_hand_case() {
    let c = camera();
    assert_eq!(c.normalize_2d([500.0, 501.0]), [0.0, 0.0]);
    assert_eq!(c.normalize_2d([0.0, 0.0]), [-1.0, -1.002]);
    let raw3d = [[0.1, 0.2, 4.0], [0.3, -0.1, 4.5]];
    let raw2d = raw3d.map(|p| c.project(p));
    let s = PoseSample::normalize(&raw2d, &raw3d, &c, 0, None).unwrap();
    assert_eq!(s.joint3d(0), [0.0, 0.0, 0.0]);
    assert!((s.joint3d(1)[2] - 0.5).abs() < 1e-15);
    assert!(PoseSample::normalize(&raw2d, &raw3d, &c, 2, None).is_err());
    let bad = Camera { width: 0.0, ..c };
    assert!(PoseSample::normalize(&raw2d, &raw3d, &bad, 0, None).is_err());
}

#[test]
fn synthetic_invariants_hold_across_seeds() {
    let g = SkeletonGraph::human36m(3);
    for seed in 0..1000 {
        let d = synth_dataset(1, seed, &g).unwrap();
        let s = &d.samples[0];
        s.validate(&g).unwrap();
        assert_eq!(s.joint3d(0), [0.0, 0.0, 0.0]);
        for b in &BONES {
            let (p, q) = (s.joint3d(b.parent), s.joint3d(b.joint));
            let len = (0..3).map(|c| (p[c] - q[c]).powi(2)).sum::<f64>().sqrt();
            assert!((len - b.length).abs() < 1e-9, "seed {seed}: bone {} length {len}", b.joint);
        }
        // the whole body stays inside the image
        assert!(s.joints2d.iter().all(|v| v.abs() < 1.0), "seed {seed} leaves the frame");
    }
}

#[test]
fn on_axis_points_land_on_the_principal_point() {
    let c = camera();
    for z in [0.5, 4.0, 37.0] {
        assert_eq!(c.project([0.0, 0.0, z]), [c.cx, c.cy]);
    }
    assert_eq!(c.normalize_2d([c.width / 2.0, c.height / 2.0]), [0.0, 0.0]);
}

proptest! {
    #[test]
    fn doubling_focal_length_and_distance_keeps_pixels(
        x in -2.0f64..2.0, y in -2.0f64..2.0, z in 1.0f64..10.0, f in 500.0f64..2000.0,
    ) {
        let c = Camera { fx: f, fy: f, ..camera() };
        let wide = Camera { fx: 2.0 * f, fy: 2.0 * f, ..c };
        let (a, b) = (c.project([x, y, z]), wide.project([x, y, 2.0 * z]));
        prop_assert!((a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9);
    }

    #[test]
    fn normalization_inverts(u in -100.0f64..1100.0, v in -100.0f64..1100.0) {
        let c = camera();
        let back = c.denormalize_2d(c.normalize_2d([u, v]));
        prop_assert!((back[0] - u).abs() < 1e-9 && (back[1] - v).abs() < 1e-9);
    }

    #[test]
    fn binary_round_trip_is_exact_after_quantization(count in 1usize..6, seed in any::<u64>(), label in "[a-zA-Z ,\"]{0,12}") {
        let g = SkeletonGraph::human36m(3);
        let mut d = quantized(synth_dataset(count, seed, &g).unwrap());
        for s in &mut d.samples {
            s.action = (!label.is_empty()).then(|| label.clone());
        }
        let back = read_hfp(&write_hfp(&d)).unwrap();
        prop_assert_eq!(&back, &d);
        prop_assert_eq!(write_hfp(&back), write_hfp(&d));
    }

    #[test]
    fn csv_round_trip_is_exact(count in 1usize..5, seed in any::<u64>(), label in "[a-zA-Z ,\"]{0,12}") {
        let g = SkeletonGraph::human36m(3);
        let mut d = synth_dataset(count, seed, &g).unwrap();
        d.samples[0].action = (!label.is_empty()).then(|| label.clone());
        prop_assert_eq!(read_csv(&write_csv(&d).unwrap()).unwrap(), d);
    }
}
