#![allow(dead_code)]

use s4mtl::data::{fully_labeled_split, make_synthetic, stratified_split, DatasetSplit, SplitFractions};
use s4mtl::models::GeneratorConfig;
use s4mtl::trainer::{Method, TrainerConfig};

pub const SIDE: usize = 16;
pub const CLASSES: usize = 3;

pub fn split(count: usize, labeled: f64, seed: u64) -> DatasetSplit {
    let samples = make_synthetic(count, SIDE, CLASSES, seed).unwrap();
    let fractions = SplitFractions {
        labeled,
        validation: 0.1,
        test: 0.1,
    };
    stratified_split(&samples, CLASSES, fractions, seed).unwrap()
}

pub fn full_split(count: usize, seed: u64) -> DatasetSplit {
    let samples = make_synthetic(count, SIDE, CLASSES, seed).unwrap();
    fully_labeled_split(&samples, CLASSES, 0.1, 0.1, seed).unwrap()
}

/// Small enough to train a few epochs in well under a second.
pub fn tiny_config(method: Method) -> TrainerConfig {
    let mut cfg = TrainerConfig::new(method);
    cfg.generator = GeneratorConfig {
        input_side: SIDE,
        depth: 1,
        base_channels: 2,
        ..GeneratorConfig::desk()
    };
    cfg.convnet_depth = 2;
    cfg.convnet_base = 2;
    cfg.batch_size = 8;
    cfg.epochs = 2;
    cfg
}
