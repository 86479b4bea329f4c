//! Stratified labeled/unlabeled partitioning and the split manifest format.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rand::seq::SliceRandom;

use super::types::Sample;
use crate::error::{Error, Result};
use crate::rng;

/// Largest labeled fraction accepted for semi-supervised training.
pub const MAX_LABELED_FRACTION: f64 = 0.5;

/// Disjoint labeled, unlabeled, validation, and test partitions.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub labeled: Vec<Sample>,
    pub unlabeled: Vec<Sample>,
    pub validation: Vec<Sample>,
    pub test: Vec<Sample>,
    /// In `(0, 0.5]` for semi-supervised splits; exactly `1.0` for the
    /// fully supervised splits built by [`fully_labeled_split`].
    pub labeled_fraction: f64,
    pub seed: u64,
    pub class_count: usize,
}

impl DatasetSplit {
    pub fn training_size(&self) -> usize {
        self.labeled.len() + self.unlabeled.len()
    }

    /// Labeled count per class index.
    pub fn labeled_class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for s in &self.labeled {
            if let Some(l) = s.label() {
                counts[l.index()] += 1;
            }
        }
        counts
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions {
    pub labeled: f64,
    pub validation: f64,
    pub test: f64,
}

/// Splits `samples` into held-out validation/test sets (stratified by class)
/// and a training pool, then draws a class-balanced labeled subset of the
/// pool. Everything else in the pool loses its mask and label.
pub fn stratified_split(
    samples: &[Sample],
    class_count: usize,
    fractions: SplitFractions,
    seed: u64,
) -> Result<DatasetSplit> {
    if !(fractions.labeled > 0.0) {
        return Err(Error::Split("labeled fraction must be positive".into()));
    }
    if fractions.labeled > MAX_LABELED_FRACTION {
        return Err(Error::Split(format!(
            "labeled fraction {} exceeds 50% cap",
            fractions.labeled
        )));
    }
    build_split(samples, class_count, fractions, seed)
}

/// Split with every training sample labeled, for fully supervised baselines.
/// Validation and test sets are identical to those of [`stratified_split`]
/// with the same seed and held-out fractions.
pub fn fully_labeled_split(
    samples: &[Sample],
    class_count: usize,
    validation: f64,
    test: f64,
    seed: u64,
) -> Result<DatasetSplit> {
    build_split(
        samples,
        class_count,
        SplitFractions {
            labeled: 1.0,
            validation,
            test,
        },
        seed,
    )
}

fn build_split(
    samples: &[Sample],
    class_count: usize,
    fractions: SplitFractions,
    seed: u64,
) -> Result<DatasetSplit> {
    if class_count < 2 {
        return Err(Error::Split("need at least two classes".into()));
    }
    let held = fractions.validation + fractions.test;
    if fractions.validation < 0.0 || fractions.test < 0.0 || held >= 1.0 {
        return Err(Error::Split(format!(
            "validation {} and test {} fractions must be nonnegative and sum below 1",
            fractions.validation, fractions.test
        )));
    }
    let mut seen = std::collections::HashSet::new();
    for s in samples {
        if !seen.insert(s.id()) {
            return Err(Error::Split(format!("duplicate sample id `{}`", s.id())));
        }
    }

    let mut by_class: Vec<Vec<&Sample>> = vec![Vec::new(); class_count];
    let mut extra_unlabeled: Vec<&Sample> = Vec::new();
    for s in samples {
        match s.label() {
            Some(l) if l.index() < class_count => by_class[l.index()].push(s),
            Some(l) => {
                return Err(Error::Split(format!(
                    "sample `{}` has class {} but class_count is {class_count}",
                    s.id(),
                    l.index()
                )))
            }
            None => extra_unlabeled.push(s),
        }
    }
    if let Some(c) = by_class.iter().position(|v| v.is_empty()) {
        return Err(Error::Split(format!("class {c} has zero samples")));
    }

    let mut validation = Vec::new();
    let mut test = Vec::new();
    let mut pools: Vec<Vec<&Sample>> = Vec::with_capacity(class_count);
    for (c, members) in by_class.iter_mut().enumerate() {
        members.sort_by(|a, b| a.id().cmp(b.id()));
        members.shuffle(&mut rng::stream(seed, "split-class", &[c as u64]));
        let n = members.len() as f64;
        let n_val = (fractions.validation * n).round() as usize;
        let n_test = ((fractions.test * n).round() as usize).min(members.len() - n_val);
        validation.extend(members[..n_val].iter().map(|s| (*s).clone()));
        test.extend(members[n_val..n_val + n_test].iter().map(|s| (*s).clone()));
        pools.push(members[n_val + n_test..].to_vec());
    }

    let mut labeled = Vec::new();
    let mut unlabeled = Vec::new();
    if fractions.labeled >= 1.0 {
        for pool in &pools {
            labeled.extend(pool.iter().map(|s| (*s).clone()));
        }
        unlabeled.extend(extra_unlabeled.iter().map(|s| (*s).clone()));
    } else {
        let train_size = pools.iter().map(Vec::len).sum::<usize>() + extra_unlabeled.len();
        let target = (fractions.labeled * train_size as f64 + 1e-9).floor() as usize;
        if target < class_count {
            return Err(Error::Split(format!(
                "labeled fraction {} of {train_size} training samples gives {target} labels, fewer than {class_count} classes",
                fractions.labeled
            )));
        }
        let mut quota = vec![target / class_count; class_count];
        let mut order: Vec<usize> = (0..class_count).collect();
        order.shuffle(&mut rng::stream(seed, "split-remainder", &[]));
        for &c in order.iter().take(target % class_count) {
            quota[c] += 1;
        }
        for (c, pool) in pools.iter().enumerate() {
            if quota[c] > pool.len() {
                return Err(Error::Split(format!(
                    "class {c} has {} training samples but needs {} labeled for a balanced split",
                    pool.len(),
                    quota[c]
                )));
            }
            labeled.extend(pool[..quota[c]].iter().map(|s| (*s).clone()));
            unlabeled.extend(pool[quota[c]..].iter().map(|s| s.strip_labels()));
        }
        unlabeled.extend(extra_unlabeled.iter().map(|s| s.strip_labels()));
    }

    for part in [&mut labeled, &mut unlabeled, &mut validation, &mut test] {
        part.sort_by(|a, b| a.id().cmp(b.id()));
    }
    Ok(DatasetSplit {
        labeled,
        unlabeled,
        validation,
        test,
        labeled_fraction: fractions.labeled.min(1.0),
        seed,
        class_count,
    })
}

/// Renders the split manifest: three `#` metadata lines, a header, then one
/// `id,partition,labeled` row per sample.
pub fn write_manifest(split: &DatasetSplit) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# labeled_fraction={}", split.labeled_fraction);
    let _ = writeln!(out, "# seed={}", split.seed);
    let _ = writeln!(out, "# class_count={}", split.class_count);
    out.push_str("id,partition,labeled\n");
    let parts: [(&[Sample], &str, u8); 4] = [
        (&split.labeled, "train", 1),
        (&split.unlabeled, "train", 0),
        (&split.validation, "val", 1),
        (&split.test, "test", 1),
    ];
    for (samples, name, flag) in parts {
        for s in samples {
            let _ = writeln!(out, "{},{name},{flag}", s.id());
        }
    }
    out
}

/// Rebuilds a split from a manifest and the full (labeled) sample list.
pub fn read_manifest(text: &str, samples: &[Sample]) -> Result<DatasetSplit> {
    let by_id: HashMap<&str, &Sample> = samples.iter().map(|s| (s.id(), s)).collect();
    let mut meta = BTreeMap::new();
    let mut split = DatasetSplit {
        labeled: Vec::new(),
        unlabeled: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
        labeled_fraction: 0.0,
        seed: 0,
        class_count: 0,
    };
    let mut header_seen = false;
    for (lineno, line) in text.lines().enumerate() {
        let bad = |msg: String| Error::Split(format!("manifest line {}: {msg}", lineno + 1));
        if let Some(rest) = line.strip_prefix("# ") {
            let (k, v) = rest
                .split_once('=')
                .ok_or_else(|| bad("malformed metadata".into()))?;
            meta.insert(k.to_string(), v.to_string());
            continue;
        }
        if !header_seen {
            if line != "id,partition,labeled" {
                return Err(bad(format!("unexpected header `{line}`")));
            }
            header_seen = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(bad(format!("expected 3 fields, got {}", fields.len())));
        }
        let sample = by_id
            .get(fields[0])
            .ok_or_else(|| bad(format!("unknown id `{}`", fields[0])))?;
        match (fields[1], fields[2]) {
            ("train", "1") => split.labeled.push((*sample).clone()),
            ("train", "0") => split.unlabeled.push(sample.strip_labels()),
            ("val", "1") => split.validation.push((*sample).clone()),
            ("test", "1") => split.test.push((*sample).clone()),
            (p, l) => return Err(bad(format!("invalid partition `{p}` / labeled `{l}`"))),
        }
    }
    let get = |k: &str| {
        meta.get(k)
            .ok_or_else(|| Error::Split(format!("manifest missing `{k}`")))
    };
    split.labeled_fraction = get("labeled_fraction")?
        .parse()
        .map_err(|e| Error::Split(format!("labeled_fraction: {e}")))?;
    split.seed = get("seed")?
        .parse()
        .map_err(|e| Error::Split(format!("seed: {e}")))?;
    split.class_count = get("class_count")?
        .parse()
        .map_err(|e| Error::Split(format!("class_count: {e}")))?;
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::types::{ClassLabel, Image, Mask};
    use std::collections::HashSet;

    fn dataset(per_class: &[usize]) -> Vec<Sample> {
        let mut out = Vec::new();
        for (c, &n) in per_class.iter().enumerate() {
            for i in 0..n {
                let img = Image::new(2, 2, vec![0.5; 4]).unwrap();
                let mask = Mask::from_binary(2, &[true, false, false, false]).unwrap();
                let label = ClassLabel::new(c, per_class.len()).unwrap();
                out.push(Sample::labeled(format!("c{c}-{i:03}"), img, mask, label).unwrap());
            }
        }
        out
    }

    fn fr(labeled: f64) -> SplitFractions {
        SplitFractions {
            labeled,
            validation: 0.0,
            test: 0.0,
        }
    }

    #[test]
    fn ten_percent_of_balanced_hundred() {
        let split = stratified_split(&dataset(&[50, 50]), 2, fr(0.1), 3).unwrap();
        assert_eq!(split.labeled.len(), 10);
        assert_eq!(split.labeled_class_counts(), vec![5, 5]);
        assert_eq!(split.unlabeled.len(), 90);
    }

    #[test]
    fn cap_is_enforced() {
        let err = stratified_split(&dataset(&[50, 50]), 2, fr(0.6), 3).unwrap_err();
        assert!(err.to_string().contains("exceeds 50% cap"), "{err}");
    }

    #[test]
    fn deterministic_given_seed() {
        let data = dataset(&[30, 30, 30]);
        let f = SplitFractions {
            labeled: 0.2,
            validation: 0.1,
            test: 0.2,
        };
        let a = stratified_split(&data, 3, f, 11).unwrap();
        let b = stratified_split(&data, 3, f, 11).unwrap();
        assert_eq!(write_manifest(&a), write_manifest(&b));
        let c = stratified_split(&data, 3, f, 12).unwrap();
        assert_ne!(write_manifest(&a), write_manifest(&c));
    }

    #[test]
    fn empty_class_is_an_error() {
        let data = dataset(&[10, 10]);
        let err = stratified_split(&data, 3, fr(0.2), 1).unwrap_err();
        assert!(err.to_string().contains("class 2 has zero samples"));
    }

    #[test]
    fn rare_class_errors_instead_of_rebalancing() {
        let data = dataset(&[95, 2]);
        assert!(stratified_split(&data, 2, fr(0.5), 1).is_err());
    }

    #[test]
    fn unlabeled_samples_carry_nothing() {
        let split = stratified_split(&dataset(&[20, 20]), 2, fr(0.3), 5).unwrap();
        assert!(split.unlabeled.iter().all(|s| s.mask().is_none() && s.label().is_none()));
    }

    #[test]
    fn validation_and_test_shared_across_fractions() {
        let data = dataset(&[40, 40]);
        let make = |l| {
            stratified_split(
                &data,
                2,
                SplitFractions {
                    labeled: l,
                    validation: 0.1,
                    test: 0.2,
                },
                9,
            )
            .unwrap()
        };
        let (a, b) = (make(0.1), make(0.5));
        let ids = |v: &[Sample]| v.iter().map(|s| s.id().to_string()).collect::<Vec<_>>();
        assert_eq!(ids(&a.test), ids(&b.test));
        assert_eq!(ids(&a.validation), ids(&b.validation));
        let full = fully_labeled_split(&data, 2, 0.1, 0.2, 9).unwrap();
        assert_eq!(ids(&full.test), ids(&a.test));
        assert!(full.unlabeled.is_empty());
        assert_eq!(full.labeled.len(), a.training_size());
    }

    #[test]
    fn manifest_round_trips_bit_exactly() {
        let data = dataset(&[25, 25]);
        let split = stratified_split(
            &data,
            2,
            SplitFractions {
                labeled: 0.3,
                validation: 0.1,
                test: 0.1,
            },
            4,
        )
        .unwrap();
        let text = write_manifest(&split);
        let back = read_manifest(&text, &data).unwrap();
        assert_eq!(back, split);
        assert_eq!(write_manifest(&back), text);
    }

    #[test]
    fn partitions_are_disjoint_and_cover_input() {
        let data = dataset(&[33, 27]);
        let split = stratified_split(
            &data,
            2,
            SplitFractions {
                labeled: 0.2,
                validation: 0.15,
                test: 0.15,
            },
            2,
        )
        .unwrap();
        let mut all = HashSet::new();
        let mut total = 0;
        for part in [&split.labeled, &split.unlabeled, &split.validation, &split.test] {
            for s in part {
                all.insert(s.id().to_string());
                total += 1;
            }
        }
        assert_eq!(total, data.len());
        assert_eq!(all.len(), data.len());
    }
}
