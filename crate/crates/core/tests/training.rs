use hopfir::data::{synth_dataset, Dataset};
use hopfir::metrics::Protocol;
use hopfir::model::{HopFirConfig, HopFirModel};
use hopfir::skeleton::SkeletonGraph;
use hopfir::train::{
    evaluate, load_checkpoint, predict_all, read_checkpoint_header, EpochRecord, Regime, TrainConfig, TrainState,
    Trainer,
};
use hopfir::Error;
use proptest::prelude::*;

fn tiny_model() -> HopFirConfig {
    let mut c = HopFirConfig::default();
    c.channels = 16;
    c.blocks = 1;
    c.heads = 2;
    c.dropout = 0.1;
    c
}

fn tiny_train(epochs: usize) -> TrainConfig {
    let mut t = TrainConfig::default();
    t.lr = 5e-3;
    t.batch_size = 8;
    t.epochs = epochs;
    t.seed = 3;
    t
}

fn data(count: usize, seed: u64) -> Dataset {
    synth_dataset(count, seed, &SkeletonGraph::human36m(3)).unwrap()
}

fn state<T: hopfir::Real>() -> TrainState<T> {
    TrainState::new(HopFirModel::build(&tiny_model(), &SkeletonGraph::human36m(3)).unwrap())
}

#[test]
fn zero_epochs_leave_the_initialization() {
    let mut s = state::<f64>();
    let init = s.model.named_parameters();
    let report = Trainer::new(tiny_train(0)).run(&mut s, &data(20, 0), None).unwrap();
    assert!(report.epochs.is_empty());
    assert_eq!(s.model.named_parameters(), init);
    assert_eq!(s.adam.step, 0);
}

#[test]
fn resuming_reproduces_the_uninterrupted_run() {
    let train = data(20, 1);
    let eval = data(6, 2);
    let dir = tempfile::tempdir().unwrap();

    let mut full = state::<f64>();
    let whole = Trainer::new(tiny_train(4)).run(&mut full, &train, Some(&eval)).unwrap();

    let mut first = state::<f64>();
    let part = Trainer::new(tiny_train(2))
        .with_output(dir.path())
        .run(&mut first, &train, Some(&eval))
        .unwrap();
    let (mut resumed, header) = load_checkpoint::<f64>(&dir.path().join("last.ckpt")).unwrap();
    assert_eq!((header.epoch, header.step), (2, 6));
    let rest = Trainer::new(tiny_train(4)).run(&mut resumed, &train, Some(&eval)).unwrap();

    let mut losses = part.step_losses.clone();
    losses.extend(&rest.step_losses);
    assert_eq!(losses, whole.step_losses);
    assert_eq!(resumed.model.named_parameters(), full.model.named_parameters());
    assert_eq!(resumed.adam, full.adam);
    assert_eq!(resumed.best_mpjpe_mm, full.best_mpjpe_mm);
}

#[test]
fn identical_runs_write_identical_files() {
    let train = data(16, 4);
    let eval = data(4, 5);
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let mut s = state::<f64>();
        Trainer::new(tiny_train(3)).with_output(d.path()).run(&mut s, &train, Some(&eval)).unwrap();
    }
    for file in ["log.jsonl", "last.ckpt", "best.ckpt"] {
        let a = std::fs::read(dirs[0].path().join(file)).unwrap();
        let b = std::fs::read(dirs[1].path().join(file)).unwrap();
        assert_eq!(a, b, "{file}");
    }
    let log = std::fs::read_to_string(dirs[0].path().join("log.jsonl")).unwrap();
    let records: Vec<EpochRecord> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 3);
    assert!(records.iter().all(|r| r.eval_mpjpe_mm.is_some()));
    let header = read_checkpoint_header(&dirs[0].path().join("best.ckpt")).unwrap();
    let best = records.iter().filter_map(|r| r.eval_mpjpe_mm).fold(f64::INFINITY, f64::min);
    assert_eq!(header.best_mpjpe_mm, Some(best));
    assert_eq!(header.train_config().unwrap(), Some(tiny_train(3)));
}

#[test]
fn training_lowers_the_loss_smoothly() {
    let mut c = tiny_model();
    c.dropout = 0.0;
    let mut s = TrainState::new(HopFirModel::<f32>::build(&c, &SkeletonGraph::human36m(3)).unwrap());
    let mut t = tiny_train(300);
    t.lr = 1e-2;
    t.lr_decay = 1.0;
    t.batch_size = 16;
    t.eval_every = 0;
    let train = data(16, 6);
    let before = evaluate(&s.model, &train, Protocol::P1, 16).unwrap().mpjpe_mm;
    let report = Trainer::new(t).run(&mut s, &train, None).unwrap();
    let windows: Vec<f64> = report.step_losses.chunks(50).map(|w| w.iter().sum::<f64>() / w.len() as f64).collect();
    assert!(windows.windows(2).all(|p| p[1] <= p[0]), "{windows:?}");
    let after = evaluate(&s.model, &train, Protocol::P1, 16).unwrap().mpjpe_mm;
    assert!(after < 0.5 * before, "{before} -> {after}");
}

#[test]
fn max_steps_stops_mid_epoch() {
    let mut s = state::<f32>();
    let mut t = tiny_train(10);
    t.max_steps = 5;
    let report = Trainer::new(t).run(&mut s, &data(20, 0), None).unwrap();
    assert_eq!(report.step_losses.len(), 5);
    assert_eq!(s.adam.step, 5);
    assert_eq!(s.epoch, 2);
}

#[test]
fn non_finite_training_aborts_with_the_batch() {
    let mut s = state::<f64>();
    for p in s.model.params.values_mut() {
        p.data_mut().fill(1e300);
    }
    let err = Trainer::new(tiny_train(1)).run(&mut s, &data(20, 0), None).unwrap_err();
    match err {
        Error::NonFinite(msg) => assert!(msg.contains("batch 0"), "{msg}"),
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn empty_splits_are_rejected() {
    let mut s = state::<f64>();
    let empty = Dataset::new(16, Vec::new()).unwrap();
    assert!(Trainer::new(tiny_train(1)).run(&mut s, &empty, None).is_err());
    assert!(evaluate(&s.model, &empty, Protocol::All, 8).is_err());
}

#[test]
fn sharded_prediction_matches_single_batches() {
    let s = state::<f64>();
    let d = data(23, 7);
    let whole = predict_all(&s.model, &d, 64).unwrap();
    for b in [1, 5, 8] {
        assert_eq!(predict_all(&s.model, &d, b).unwrap(), whole);
    }
    let (x, _) = d.batch::<f64>(&(0..23).collect::<Vec<_>>()).unwrap();
    assert_eq!(s.model.predict(&x).unwrap().data(), &whole[..]);
}

#[test]
fn per_action_means_are_consistent() {
    let s = state::<f64>();
    let mut d = data(12, 8);
    for (i, sample) in d.samples.iter_mut().enumerate() {
        sample.action = Some(["walk", "sit", "greet"][i % 3].to_string());
    }
    let r = evaluate(&s.model, &d, Protocol::All, 5).unwrap();
    let per = r.per_action.unwrap();
    let weighted = per.values().map(|v| v * 4.0).sum::<f64>() / 12.0;
    assert!((weighted - r.mpjpe_mm).abs() < 1e-9);
}

#[test]
fn published_schedule_values() {
    let gt = TrainConfig::default();
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b;
    assert_eq!(gt.lr_at(0), 0.001);
    assert!(close(gt.lr_at(4), 0.0009));
    assert!(close(gt.lr_at(11), 0.00081));
    assert!(close(gt.lr_at(12), 0.000729));
    let mut det = TrainConfig::default();
    det.apply_regime(Regime::Detected2d);
    for e in 0..8 {
        assert!(close(det.lr_at(e), 0.0012));
    }
    assert!(close(det.lr_at(8), 0.00114));
}

proptest! {
    #[test]
    fn schedules_never_increase(epoch in 0usize..500, detected in any::<bool>()) {
        let mut c = TrainConfig::default();
        if detected {
            c.apply_regime(Regime::Detected2d);
        }
        prop_assert!(c.lr_at(epoch + 1) <= c.lr_at(epoch));
        prop_assert!(c.lr_at(epoch) > 0.0);
    }
}
