use hopfir::gradsuite::{gradient_suite, suite_layers, SuiteOptions};
use hopfir::model::{HopFirConfig, ModuleMode};
use hopfir::skeleton::SkeletonGraph;

fn tiny() -> HopFirConfig {
    let mut c = HopFirConfig::default();
    c.channels = 8;
    c.blocks = 1;
    c.heads = 2;
    c
}

#[test]
fn every_layer_passes_finite_differences() {
    let g = SkeletonGraph::human36m(3);
    let opts = SuiteOptions {
        seeds: vec![3],
        ..Default::default()
    };
    let checks = gradient_suite(&tiny(), &g, &opts).unwrap();
    assert_eq!(checks.len(), suite_layers().len());
    for c in &checks {
        assert!(c.report.passed && c.report.checked >= 200, "{}: {:?}", c.layer, c.report);
    }
}

#[test]
fn ablation_modes_pass_the_loss_check() {
    let g = SkeletonGraph::human36m(3);
    for mode in [ModuleMode::GcnOnly, ModuleMode::HopGcnOnly, ModuleMode::HopGcnIjr] {
        let mut c = tiny();
        c.module_mode = mode;
        c.learnable_graph = false;
        let checks = gradient_suite(&c, &g, &SuiteOptions { seeds: vec![1], ..Default::default() }).unwrap();
        let loss = checks.iter().find(|c| c.layer == "loss").unwrap();
        assert!(loss.report.passed, "{mode:?}: {:?}", loss.report);
    }
}

#[test]
fn corrupted_gradients_are_caught() {
    let g = SkeletonGraph::human36m(3);
    let opts = SuiteOptions {
        seeds: vec![0],
        corrupt: Some(1.01),
        ..Default::default()
    };
    let checks = gradient_suite(&tiny(), &g, &opts).unwrap();
    assert!(checks.iter().all(|c| !c.report.passed));
}
