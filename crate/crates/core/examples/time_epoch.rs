//! Times one training epoch per method on a 500-sample 64 px synthetic set.
//!
//! cargo run --release --example time_epoch -- [fraction] [base_channels]

use std::time::Instant;

use s4mtl::data::{make_synthetic, stratified_split, SplitFractions};
use s4mtl::trainer::{train_baseline, Method, TrainerConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let fraction: f64 = args.get(1).map_or(0.1, |s| s.parse().expect("fraction"));
    let base: usize = args.get(2).map_or(4, |s| s.parse().expect("base channels"));
    let samples = make_synthetic(500, 64, 2, 0).unwrap();
    let fractions = SplitFractions {
        labeled: fraction,
        validation: 0.1,
        test: 0.2,
    };
    let split = stratified_split(&samples, 2, fractions, 0).unwrap();
    for method in [Method::S4mtl, Method::S2mtl, Method::Unet] {
        let mut cfg = TrainerConfig::new(method);
        cfg.generator.base_channels = base;
        cfg.epochs = 1;
        let start = Instant::now();
        let (_, hist) = train_baseline(&split, &cfg).unwrap();
        let secs = start.elapsed().as_secs_f64();
        let steps = hist.steps.len();
        println!(
            "{method}: {steps} steps, {secs:.2}s total, {:.3}s/step, val dice {:?}",
            secs / steps as f64,
            hist.epochs[0].val.ds
        );
    }
}
