use std::collections::HashSet;

use hopfir::data::synth_dataset;
use hopfir::layers::Ctx;
use hopfir::model::{HopFirConfig, HopFirModel, ModuleMode};
use hopfir::skeleton::SkeletonGraph;
use hopfir::train::{checkpoint_bytes, state_from_bytes, TrainState};
use hopfir::{Tape, Tensor};

const MODES: [ModuleMode; 5] = [
    ModuleMode::GcnOnly,
    ModuleMode::HopGcnOnly,
    ModuleMode::HopGcnIjr,
    ModuleMode::HopGcnHgf,
    ModuleMode::Full,
];

fn tiny(mode: ModuleMode, seed: u64) -> HopFirConfig {
    let mut c = HopFirConfig::default();
    c.channels = 16;
    c.blocks = 2;
    c.heads = 2;
    c.module_mode = mode;
    c.seed = seed;
    c
}

fn inputs(count: usize) -> Tensor<f64> {
    let g = SkeletonGraph::human36m(3);
    let data = synth_dataset(count, 5, &g).unwrap();
    let idx: Vec<usize> = (0..count).collect();
    data.batch::<f64>(&idx).unwrap().0
}

#[test]
fn outputs_are_finite_for_zero_input() {
    let g = SkeletonGraph::human36m(3);
    for mode in MODES {
        let model = HopFirModel::<f64>::build(&tiny(mode, 0), &g).unwrap();
        let y = model.predict(&Tensor::zeros(&[3, 16, 2])).unwrap();
        assert_eq!(y.shape(), &[3, 16, 3]);
        assert!(y.is_finite());
    }
}

#[test]
fn construction_and_prediction_are_deterministic() {
    let g = SkeletonGraph::human36m(3);
    let x = inputs(4);
    for mode in MODES {
        let a = HopFirModel::<f64>::build(&tiny(mode, 9), &g).unwrap();
        let b = HopFirModel::<f64>::build(&tiny(mode, 9), &g).unwrap();
        assert_eq!(a.named_parameters(), b.named_parameters());
        assert_eq!(a.predict(&x).unwrap(), b.predict(&x).unwrap());
        let c = HopFirModel::<f64>::build(&tiny(mode, 10), &g).unwrap();
        assert_ne!(a.named_parameters(), c.named_parameters());
    }
}

#[test]
fn samples_do_not_interact_within_a_batch() {
    let g = SkeletonGraph::human36m(3);
    let x = inputs(5);
    let per = 16 * 2;
    for mode in MODES {
        let model = HopFirModel::<f64>::build(&tiny(mode, 1), &g).unwrap();
        let all = model.predict(&x).unwrap();
        for s in 0..5 {
            let one = Tensor::new(&[1, 16, 2], x.data()[s * per..(s + 1) * per].to_vec()).unwrap();
            let y = model.predict(&one).unwrap();
            for (a, b) in y.data().iter().zip(&all.data()[s * 48..(s + 1) * 48]) {
                assert!((a - b).abs() < 1e-12, "{mode:?} sample {s}");
            }
        }
    }
}

#[test]
fn zeroed_output_layer_predicts_zero() {
    let g = SkeletonGraph::human36m(3);
    let mut model = HopFirModel::<f64>::build(&tiny(ModuleMode::Full, 2), &g).unwrap();
    for name in ["head.out.weight", "head.out.bias"] {
        let id = model.params.id(name).unwrap();
        model.params.get_mut(id).data_mut().fill(0.0);
    }
    let y = model.predict(&inputs(3)).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn blocks_without_units_pass_features_through() {
    let g = SkeletonGraph::human36m(3);
    let mut c = tiny(ModuleMode::GcnOnly, 4);
    c.arrangement = "I".into();
    let model = HopFirModel::<f64>::build(&c, &g).unwrap();
    assert!(model.blocks.iter().all(|b| b.is_empty()));
    let x = inputs(2);
    let tape = Tape::new();
    let cx = Ctx::new(&tape, &model.params);
    let h = model.embed.forward(&cx, tape.constant(x.clone())).unwrap();
    let y = model.head.forward(&cx, h).unwrap();
    assert_eq!(tape.value(y).clone(), model.predict(&x).unwrap());
}

#[test]
fn parameter_names_are_unique_and_scoped() {
    let g = SkeletonGraph::human36m(3);
    for mode in MODES {
        let model = HopFirModel::<f64>::build(&tiny(mode, 0), &g).unwrap();
        let names = model.params.names();
        let set: HashSet<&String> = names.iter().collect();
        assert_eq!(set.len(), names.len());
        assert!(names
            .iter()
            .all(|n| n.starts_with("embed.") || n.starts_with("block") || n.starts_with("head.")));
        assert_eq!(
            model.num_parameters(),
            model.params.values().iter().map(|t| t.len()).sum::<usize>()
        );
    }
}

#[test]
fn attention_maps_are_row_stochastic() {
    let g = SkeletonGraph::human36m(3);
    let model = HopFirModel::<f64>::build(&tiny(ModuleMode::Full, 3), &g).unwrap();
    let (_, attn) = model.predict_with_attention(&inputs(2)).unwrap();
    // Two HGF slots per block, three hops each.
    assert_eq!(attn.len(), 2 * 2 * 3);
    assert_eq!(attn[0].0, "block0.0.hop1");
    for (_, a) in &attn {
        assert_eq!(a.shape(), &[2, 16, 16]);
        for row in a.data().chunks(16) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let g = SkeletonGraph::human36m(3);
    let x = inputs(3);
    for mode in MODES {
        let model = HopFirModel::<f64>::build(&tiny(mode, 6), &g).unwrap();
        let state = TrainState::new(model);
        let bytes = checkpoint_bytes(&state, None).unwrap();
        let (back, header) = state_from_bytes::<f64>(&bytes).unwrap();
        assert_eq!(header.model_config().unwrap(), state.model.config);
        assert_eq!(back.model.named_parameters(), state.model.named_parameters());
        assert_eq!(back.model.predict(&x).unwrap(), state.model.predict(&x).unwrap());
        assert_eq!(checkpoint_bytes(&back, None).unwrap(), bytes);
        assert!(state_from_bytes::<f32>(&bytes).is_err());
    }
}

#[test]
fn rejects_malformed_inputs() {
    let g = SkeletonGraph::human36m(3);
    let model = HopFirModel::<f64>::build(&tiny(ModuleMode::Full, 0), &g).unwrap();
    assert!(model.predict(&Tensor::zeros(&[2, 15, 2])).is_err());
    assert!(model.predict(&Tensor::zeros(&[2, 16, 3])).is_err());
    let mut x = inputs(1);
    x.data_mut()[0] = f64::NAN;
    assert!(model.predict(&x).is_err());
}
