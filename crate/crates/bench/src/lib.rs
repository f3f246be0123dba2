//! Shared fixtures for the benchmarks.

use hopfir::data::{synth_dataset, Dataset};
use hopfir::model::HopFirConfig;
use hopfir::skeleton::SkeletonGraph;

/// The default model with `channels` features, and a synthetic dataset of
/// `samples` poses on the human skeleton.
pub fn fixture(channels: usize, samples: usize) -> (HopFirConfig, SkeletonGraph, Dataset) {
    let config = HopFirConfig {
        channels,
        ..HopFirConfig::default()
    };
    let skeleton = SkeletonGraph::human36m(config.hops);
    let data = synth_dataset(samples, 0, &skeleton).expect("synthetic data");
    (config, skeleton, data)
}
