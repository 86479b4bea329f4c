//! Labeled/unlabeled partition invariants over the protocol fractions.

use std::collections::HashSet;

use s4mtl::data::{fully_labeled_split, make_synthetic, stratified_split, DatasetSplit, Sample, SplitFractions};

pub const FRACTIONS: [f64; 5] = [0.05, 0.1, 0.2, 0.3, 0.5];
pub const SEEDS: [u64; 3] = [0, 1, 2];
pub const CLASS_COUNTS: [usize; 2] = [2, 3];
pub const MAX_IMBALANCE: usize = 1;

fn ids(part: &[Sample]) -> Vec<String> {
    part.iter().map(|s| s.id().to_string()).collect()
}

fn check(split: &DatasetSplit, total: usize, label: &str) -> Result<(), String> {
    let parts = [&split.labeled, &split.unlabeled, &split.validation, &split.test];
    let mut seen = HashSet::new();
    for part in parts {
        for id in ids(part) {
            if !seen.insert(id.clone()) {
                return Err(format!("{label}: `{id}` appears in two partitions"));
            }
        }
    }
    if seen.len() != total {
        return Err(format!("{label}: partitions cover {} of {total} samples", seen.len()));
    }
    if split.unlabeled.iter().any(|s| s.is_labeled()) {
        return Err(format!("{label}: unlabeled partition keeps labels"));
    }
    let counts = split.labeled_class_counts();
    let spread = counts.iter().max().unwrap() - counts.iter().min().unwrap();
    if spread > MAX_IMBALANCE {
        return Err(format!("{label}: labeled class counts {counts:?}"));
    }
    Ok(())
}

pub fn suite() -> Result<String, String> {
    let mut checked = 0;
    for &classes in &CLASS_COUNTS {
        let samples = make_synthetic(120, 16, classes, 9).map_err(|e| e.to_string())?;
        for &seed in &SEEDS {
            let full = fully_labeled_split(&samples, classes, 0.1, 0.2, seed).map_err(|e| e.to_string())?;
            check(&full, samples.len(), &format!("n={classes} seed {seed} full"))?;
            for &f in &FRACTIONS {
                let label = format!("n={classes} seed {seed} f={f}");
                let fr = SplitFractions {
                    labeled: f,
                    validation: 0.1,
                    test: 0.2,
                };
                let split = stratified_split(&samples, classes, fr, seed).map_err(|e| format!("{label}: {e}"))?;
                check(&split, samples.len(), &label)?;
                if (split.labeled.len() as f64) > f * split.training_size() as f64 + 1e-9 {
                    return Err(format!("{label}: {} labeled of {}", split.labeled.len(), split.training_size()));
                }
                if ids(&split.test) != ids(&full.test) || ids(&split.validation) != ids(&full.validation) {
                    return Err(format!("{label}: held-out sets differ from the fully labeled split"));
                }
                checked += 1;
            }
            for over in [0.51, 0.75, 1.0] {
                let fr = SplitFractions {
                    labeled: over,
                    validation: 0.1,
                    test: 0.2,
                };
                if stratified_split(&samples, classes, fr, seed).is_ok() {
                    return Err(format!("n={classes} seed {seed}: fraction {over} accepted above the 50% cap"));
                }
            }
        }
    }
    Ok(format!(
        "{checked} splits disjoint and covering, class imbalance <= {MAX_IMBALANCE}, fractions above 0.5 rejected"
    ))
}

#[test]
fn splits_are_balanced_disjoint_and_capped() {
    if let Err(e) = suite() {
        panic!("{e}");
    }
}
