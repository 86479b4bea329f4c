//! Training signal annealing for the discriminator's supervised term.
//!
//! Examples whose true-class probability already exceeds the threshold η are
//! dropped from the supervised classification loss for the current step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TsaConfig {
    /// Total number of training epochs `E`.
    pub total_epochs: usize,
    /// Training set size `N` (labeled plus unlabeled).
    pub dataset_size: usize,
    pub class_count: usize,
    pub enabled: bool,
    /// Evaluate `1 − exp(·)·(1 − 1/n) + 1/n` as literally printed. This
    /// form is unbounded above 1 and exists only for comparison.
    pub literal_form: bool,
}

impl TsaConfig {
    pub fn new(total_epochs: usize, dataset_size: usize, class_count: usize) -> Self {
        TsaConfig {
            total_epochs,
            dataset_size,
            class_count,
            enabled: true,
            literal_form: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_epochs < 1 {
            return Err(Error::invalid("TSA needs at least one epoch"));
        }
        if self.dataset_size < 1 {
            return Err(Error::invalid("TSA needs a nonempty training set"));
        }
        if self.class_count < 2 {
            return Err(Error::invalid("TSA needs at least two classes"));
        }
        Ok(())
    }
}

/// η(e, s) = (1 − exp(−(s·e + 1)/(E·N)))·(1 − 1/n) + 1/n.
/// In floating point η rounds to exactly 1 once `exp(−x)` underflows the
/// unit roundoff.
pub fn tsa_threshold(epoch: usize, step: usize, cfg: &TsaConfig) -> Result<f64> {
    cfg.validate()?;
    let x = (step as f64 * epoch as f64 + 1.0) / (cfg.total_epochs as f64 * cfg.dataset_size as f64);
    let floor = 1.0 / cfg.class_count as f64;
    Ok(if cfg.literal_form {
        1.0 - (-x).exp() * (1.0 - floor) + floor
    } else {
        -(-x).exp_m1() * (1.0 - floor) + floor
    })
}

/// Weight 0 where the true-class probability exceeds η, else 1.
pub fn tsa_weights(true_class_probs: &[f64], eta: f64) -> Vec<f64> {
    true_class_probs
        .iter()
        .map(|&p| if p > eta { 0.0 } else { 1.0 })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn cfg(e: usize, n_data: usize, n: usize) -> TsaConfig {
        TsaConfig::new(e, n_data, n)
    }

    #[test]
    fn first_step_value() {
        let v = tsa_threshold(0, 0, &cfg(10, 100, 2)).unwrap();
        let expect = 0.5 + 0.5 * (1.0 - (-0.001f64).exp());
        assert_relative_eq!(v, expect, epsilon = 1e-15);
        assert!(v > 0.5);
    }

    #[test]
    fn approaches_one() {
        let v = tsa_threshold(1_000_000, 1_000_000, &cfg(10, 100, 2)).unwrap();
        assert!(v <= 1.0 && v > 1.0 - 1e-12);
    }

    #[test]
    fn literal_form_exceeds_one() {
        let c = TsaConfig {
            literal_form: true,
            ..cfg(1, 1, 2)
        };
        assert!(tsa_threshold(1000, 1000, &c).unwrap() > 1.0);
    }

    #[test]
    fn invalid_config() {
        assert!(tsa_threshold(0, 0, &cfg(0, 10, 2)).is_err());
        assert!(tsa_threshold(0, 0, &cfg(1, 0, 2)).is_err());
        assert!(tsa_threshold(0, 0, &cfg(1, 10, 1)).is_err());
    }

    #[test]
    fn weights_examples() {
        assert_eq!(tsa_weights(&[0.0, 0.0], 0.5), vec![1.0, 1.0]);
        assert_eq!(tsa_weights(&[0.9, 0.3], 0.5), vec![0.0, 1.0]);
        assert_eq!(tsa_weights(&[1.0, 0.999], 1.0), vec![1.0, 1.0]);
    }

    proptest! {
        #[test]
        fn bounded_and_monotone(
            e1 in 0usize..200, s1 in 0usize..200, e2 in 0usize..200, s2 in 0usize..200,
            epochs in 1usize..50, data in 1usize..500, n in 2usize..6,
        ) {
            let c = cfg(epochs, data, n);
            let a = tsa_threshold(e1, s1, &c).unwrap();
            let b = tsa_threshold(e2, s2, &c).unwrap();
            let floor = 1.0 / n as f64;
            prop_assert!(a > floor && a <= 1.0);
            if s1 * e1 <= s2 * e2 {
                prop_assert!(a <= b);
            }
        }
    }
}
