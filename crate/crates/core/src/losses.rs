//! Loss terms for the generator and discriminator and their weighted totals.
//!
//! Every function returns the loss value together with its gradient with
//! respect to the differentiable input (mask probabilities, class logits, or
//! fake-class probabilities). Batch terms are means over the mini-batch.

use serde::{Deserialize, Serialize};

use crate::data::{Mask, BACKGROUND, FOREGROUND, MASK_CHANNELS};
use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Additive stabilizer in the Dice denominator.
pub const DICE_EPS: f64 = 1e-7;
/// Probability clamp for logarithmic terms.
pub const PROB_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Weight of every unlabeled-data term.
    pub alpha: f64,
    /// Weight of the generator's adversarial terms.
    pub lambda_adv: f64,
    /// Weight of the discriminator's transform-prediction term.
    pub lambda_self: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 1.0,
            lambda_adv: 0.01,
            lambda_self: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("lambda_adv", self.lambda_adv),
            ("lambda_self", self.lambda_self),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("loss weight {name} = {v} must be nonnegative")));
            }
        }
        Ok(())
    }
}

/// Per-step value of every loss component and the two weighted totals.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub dice_supervised: f64,
    pub kl_unsupervised: f64,
    pub g_adv_labeled: f64,
    pub g_adv_unlabeled: f64,
    pub d_supervised: f64,
    pub d_selfsup: f64,
    pub d_adv_real: f64,
    pub d_adv_pred_labeled: f64,
    pub d_adv_pred_unlabeled: f64,
    pub total_g: f64,
    pub total_d: f64,
}

impl LossReport {
    pub const FIELDS: [&'static str; 11] = [
        "dice_supervised",
        "kl_unsupervised",
        "g_adv_labeled",
        "g_adv_unlabeled",
        "d_supervised",
        "d_selfsup",
        "d_adv_real",
        "d_adv_pred_labeled",
        "d_adv_pred_unlabeled",
        "total_g",
        "total_d",
    ];

    pub fn values(&self) -> [f64; 11] {
        [
            self.dice_supervised,
            self.kl_unsupervised,
            self.g_adv_labeled,
            self.g_adv_unlabeled,
            self.d_supervised,
            self.d_selfsup,
            self.d_adv_real,
            self.d_adv_pred_labeled,
            self.d_adv_pred_unlabeled,
            self.total_g,
            self.total_d,
        ]
    }

    pub fn from_values(v: [f64; 11]) -> Self {
        LossReport {
            dice_supervised: v[0],
            kl_unsupervised: v[1],
            g_adv_labeled: v[2],
            g_adv_unlabeled: v[3],
            d_supervised: v[4],
            d_selfsup: v[5],
            d_adv_real: v[6],
            d_adv_pred_labeled: v[7],
            d_adv_pred_unlabeled: v[8],
            total_g: v[9],
            total_d: v[10],
        }
    }

    /// Fills both totals from the components.
    pub fn with_totals(mut self, w: &LossWeights) -> Result<Self> {
        self.total_g = total_g(&self, w)?;
        self.total_d = total_d(&self, w)?;
        Ok(self)
    }

    /// Name of the first non-finite component, if any.
    pub fn first_non_finite(&self) -> Option<(&'static str, f64)> {
        Self::FIELDS
            .iter()
            .zip(self.values())
            .find(|(_, v)| !v.is_finite())
            .map(|(n, v)| (*n, v))
    }
}

/// `dice_supervised + λ_adv·g_adv_labeled + α·(kl_unsupervised + λ_adv·g_adv_unlabeled)`
pub fn total_g(r: &LossReport, w: &LossWeights) -> Result<f64> {
    w.validate()?;
    Ok(r.dice_supervised
        + w.lambda_adv * r.g_adv_labeled
        + w.alpha * (r.kl_unsupervised + w.lambda_adv * r.g_adv_unlabeled))
}

/// `d_supervised + d_adv_real + d_adv_pred_labeled + α·(λ_self·d_selfsup + d_adv_pred_unlabeled)`
pub fn total_d(r: &LossReport, w: &LossWeights) -> Result<f64> {
    w.validate()?;
    Ok(r.d_supervised
        + r.d_adv_real
        + r.d_adv_pred_labeled
        + w.alpha * (w.lambda_self * r.d_selfsup + r.d_adv_pred_unlabeled))
}

/// Numerically stable softmax over the `n+1` discriminator logits.
pub fn class_probabilities(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::invalid("empty logit vector"));
    }
    if let Some(v) = logits.iter().find(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("non-finite logit {v}")));
    }
    Ok(softmax(logits))
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    mx + logits.iter().map(|l| (l - mx).exp()).sum::<f64>().ln()
}

fn check_mask_pair(y: &[f64], p: &[f64]) -> Result<usize> {
    if y.len() != p.len() || y.len() % MASK_CHANNELS != 0 {
        return Err(Error::shape(format!(
            "mask lengths {} and {} disagree",
            y.len(),
            p.len()
        )));
    }
    Ok(y.len() / MASK_CHANNELS)
}

/// Dice loss on the foreground logit with background as complement, for
/// channel-major `[K, m, m]` slices. Returns the loss and `∂L/∂p`.
pub fn dice_loss_slices(y: &[f64], p: &[f64]) -> Result<(f64, Vec<f64>)> {
    let plane = check_mask_pair(y, p)?;
    let (fg, bg) = (FOREGROUND * plane, BACKGROUND * plane);
    let (mut tp, mut fp, mut fnn) = (0.0, 0.0, 0.0);
    for i in 0..plane {
        tp += y[fg + i] * p[fg + i];
        fp += y[bg + i] * p[fg + i];
        fnn += y[fg + i] * p[bg + i];
    }
    let denom = tp + 0.5 * fp + 0.5 * fnn + DICE_EPS;
    let loss = 1.0 - tp / denom;
    let d2 = denom * denom;
    let mut grad = vec![0.0; p.len()];
    for i in 0..plane {
        let (y1, y0) = (y[fg + i], y[bg + i]);
        grad[fg + i] = -(y1 * denom - tp * (y1 + 0.5 * y0)) / d2;
        grad[bg + i] = tp * 0.5 * y1 / d2;
    }
    Ok((loss, grad))
}

pub fn dice_loss(y: &Mask, p: &Mask) -> Result<f64> {
    Ok(dice_loss_slices(y.probs(), p.probs())?.0)
}

/// Mean Dice loss over a `[n, K, m, m]` batch and its gradient.
pub fn dice_loss_batch(y: &Tensor, p: &Tensor) -> Result<(f64, Tensor)> {
    if y.shape() != p.shape() || y.shape().len() != 4 {
        return Err(Error::shape(format!(
            "dice batch shapes {:?} vs {:?}",
            y.shape(),
            p.shape()
        )));
    }
    let n = y.shape()[0];
    let per = y.len() / n.max(1);
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(p.len());
    for i in 0..n {
        let (l, g) = dice_loss_slices(&y.data()[i * per..(i + 1) * per], &p.data()[i * per..(i + 1) * per])?;
        total += l;
        grad.extend(g.into_iter().map(|v| v / n as f64));
    }
    Ok((total / n as f64, Tensor::from_vec(p.shape(), grad)?))
}

fn clamp_prob(v: f64) -> f64 {
    v.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// `|(a − b)·ln(a/b)|` and its derivative in `b`, both arguments clamped to
/// `[ε, 1−ε]`. The derivative is zero where `b` is clamped.
fn abs_kl_term(a_raw: f64, b_raw: f64) -> (f64, f64) {
    let a = clamp_prob(a_raw);
    let b = clamp_prob(b_raw);
    let log_ratio = a.ln() - b.ln();
    let inner = (a - b) * log_ratio;
    let d_inner = -log_ratio - (a - b) / b;
    let grad = if b_raw < PROB_EPS || b_raw > 1.0 - PROB_EPS {
        0.0
    } else {
        inner.signum() * d_inner
    };
    (inner.abs(), grad)
}

/// Logit-wise absolute KL between a labeled ground truth and an unlabeled
/// prediction, summed over the foreground logit of every pixel. Returns the
/// value and `∂L/∂p` (nonzero only on the foreground channel).
pub fn abs_kl_slices(y: &[f64], p: &[f64]) -> Result<(f64, Vec<f64>)> {
    let plane = check_mask_pair(y, p)?;
    let fg = FOREGROUND * plane;
    let mut total = 0.0;
    let mut grad = vec![0.0; p.len()];
    for i in 0..plane {
        let (v, g) = abs_kl_term(y[fg + i], p[fg + i]);
        total += v;
        grad[fg + i] = g;
    }
    Ok((total, grad))
}

pub fn abs_kl_loss(y_l: &Mask, p_u: &Mask) -> Result<f64> {
    Ok(abs_kl_slices(y_l.probs(), p_u.probs())?.0)
}

/// How labeled ground truths are matched with unlabeled predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KlPairing {
    /// The i-th labeled mask against the i-th unlabeled prediction.
    Index,
    /// Batch-mean labeled mask against batch-mean unlabeled prediction.
    Pooled,
}

/// Batch absolute-KL term. With [`KlPairing::Index`] the value is the mean
/// over the first `min(n_l, n_u)` index pairs; unpaired predictions receive
/// zero gradient.
pub fn abs_kl_batch(y_l: &Tensor, p_u: &Tensor, pairing: KlPairing) -> Result<(f64, Tensor)> {
    if y_l.shape().len() != 4 || p_u.shape().len() != 4 || y_l.shape()[1..] != p_u.shape()[1..] {
        return Err(Error::shape(format!(
            "absolute KL shapes {:?} vs {:?}",
            y_l.shape(),
            p_u.shape()
        )));
    }
    let (nl, nu) = (y_l.shape()[0], p_u.shape()[0]);
    let per = y_l.len() / nl.max(1);
    let mut grad = Tensor::zeros(p_u.shape());
    if nl == 0 || nu == 0 {
        return Ok((0.0, grad));
    }
    match pairing {
        KlPairing::Index => {
            let pairs = nl.min(nu);
            let mut total = 0.0;
            for i in 0..pairs {
                let (v, g) = abs_kl_slices(&y_l.data()[i * per..(i + 1) * per], &p_u.data()[i * per..(i + 1) * per])?;
                total += v;
                for (d, gv) in grad.data_mut()[i * per..(i + 1) * per].iter_mut().zip(g) {
                    *d = gv / pairs as f64;
                }
            }
            Ok((total / pairs as f64, grad))
        }
        KlPairing::Pooled => {
            let mean = |t: &Tensor, n: usize| {
                let mut m = vec![0.0; per];
                for i in 0..n {
                    for (acc, v) in m.iter_mut().zip(&t.data()[i * per..(i + 1) * per]) {
                        *acc += v / n as f64;
                    }
                }
                m
            };
            let (v, g) = abs_kl_slices(&mean(y_l, nl), &mean(p_u, nu))?;
            for i in 0..nu {
                for (d, gv) in grad.data_mut()[i * per..(i + 1) * per].iter_mut().zip(&g) {
                    *d = gv / nu as f64;
                }
            }
            Ok((v, grad))
        }
    }
}

fn check_probs(p: &[f64]) -> Result<()> {
    if let Some(v) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::invalid(format!("probability {v} outside [0, 1]")));
    }
    Ok(())
}

/// Mean `−ln(1 − p)` with `p ≤ 1 − ε`, and `∂L/∂p`.
pub fn neg_log_one_minus(p: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_probs(p)?;
    if p.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let n = p.len() as f64;
    let cap = 1.0 - PROB_EPS;
    let mut total = 0.0;
    let grad = p
        .iter()
        .map(|&v| {
            let c = v.min(cap);
            total += -(1.0 - c).ln();
            if v > cap {
                0.0
            } else {
                1.0 / ((1.0 - c) * n)
            }
        })
        .collect();
    Ok((total / n, grad))
}

/// Mean `−ln p` with `p ≥ ε`, and `∂L/∂p`.
pub fn neg_log(p: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_probs(p)?;
    if p.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let n = p.len() as f64;
    let mut total = 0.0;
    let grad = p
        .iter()
        .map(|&v| {
            let c = v.max(PROB_EPS);
            total += -c.ln();
            if v < PROB_EPS {
                0.0
            } else {
                -1.0 / (c * n)
            }
        })
        .collect();
    Ok((total / n, grad))
}

/// Generator adversarial term: the generator wants its pairs judged real.
pub fn g_adv_loss(p_fake: &[f64]) -> Result<f64> {
    Ok(neg_log_one_minus(p_fake)?.0)
}

/// Discriminator adversarial terms: real pairs, labeled predicted pairs,
/// unlabeled predicted pairs.
pub fn d_adv_losses(real: &[f64], pred_labeled: &[f64], pred_unlabeled: &[f64]) -> Result<(f64, f64, f64)> {
    Ok((
        neg_log_one_minus(real)?.0,
        neg_log(pred_labeled)?.0,
        neg_log(pred_unlabeled)?.0,
    ))
}

/// Probability of the last (fake) class for each row of `[n, n+1]` logits.
pub fn fake_probabilities(logits: &Tensor) -> Vec<f64> {
    let (n, c) = logits.dims2();
    (0..n)
        .map(|i| softmax(&logits.data()[i * c..(i + 1) * c])[c - 1])
        .collect()
}

/// Chains `∂L/∂p_fake` through the softmax into `∂L/∂logits`.
pub fn fake_prob_grad_to_logits(logits: &Tensor, d_pfake: &[f64]) -> Tensor {
    let (n, c) = logits.dims2();
    let mut out = Tensor::zeros(&[n, c]);
    for i in 0..n {
        let p = softmax(&logits.data()[i * c..(i + 1) * c]);
        let pf = p[c - 1];
        for j in 0..c {
            let delta = if j == c - 1 { 1.0 } else { 0.0 };
            out.data_mut()[i * c + j] = d_pfake[i] * pf * (delta - p[j]);
        }
    }
    out
}

/// Weighted mean cross-entropy of `targets` under softmax `logits`
/// (`Σ wᵢ·(−ln pᵢ[tᵢ]) / Σ wᵢ`, zero when every weight is zero), with targets
/// restricted to `0..max_target`. Returns value and `∂L/∂logits`.
pub fn weighted_cross_entropy(
    logits: &Tensor,
    targets: &[usize],
    weights: Option<&[f64]>,
    max_target: usize,
) -> Result<(f64, Tensor)> {
    let (n, c) = logits.dims2();
    if targets.len() != n {
        return Err(Error::shape(format!("{} targets for {n} logit rows", targets.len())));
    }
    if let Some(w) = weights {
        if w.len() != n {
            return Err(Error::shape("weight count mismatch"));
        }
        if w.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::invalid("sample weights must be nonnegative"));
        }
    }
    if let Some(t) = targets.iter().find(|&&t| t >= max_target || t >= c) {
        return Err(Error::invalid(format!(
            "target {t} is not a valid class (must be < {max_target})"
        )));
    }
    let w = |i: usize| weights.map_or(1.0, |w| w[i]);
    let wsum: f64 = (0..n).map(w).sum();
    let mut grad = Tensor::zeros(&[n, c]);
    if wsum == 0.0 {
        return Ok((0.0, grad));
    }
    let mut total = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        let row = &logits.data()[i * c..(i + 1) * c];
        let wi = w(i);
        total += wi * (log_sum_exp(row) - row[t]);
        let p = softmax(row);
        for j in 0..c {
            let onehot = if j == t { 1.0 } else { 0.0 };
            grad.data_mut()[i * c + j] = wi * (p[j] - onehot) / wsum;
        }
    }
    Ok((total / wsum, grad))
}

/// Supervised classification term on `[n, n_classes+1]` logits. The fake
/// class (last index) is never a valid target.
pub fn d_supervised_loss(logits: &Tensor, labels: &[usize], weights: Option<&[f64]>) -> Result<(f64, Tensor)> {
    let (_, c) = logits.dims2();
    weighted_cross_entropy(logits, labels, weights, c - 1)
}

/// Transform-prediction term on the `[n, T]` auxiliary logits.
pub fn d_selfsup_loss(aux_logits: &Tensor, transforms: &[usize], weights: Option<&[f64]>) -> Result<(f64, Tensor)> {
    let (_, t) = aux_logits.dims2();
    weighted_cross_entropy(aux_logits, transforms, weights, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn logits(rows: &[&[f64]]) -> Tensor {
        let c = rows[0].len();
        Tensor::from_vec(&[rows.len(), c], rows.iter().flat_map(|r| r.iter().cloned()).collect()).unwrap()
    }

    #[test]
    fn softmax_examples() {
        let p = class_probabilities(&[0.0, 0.0, 0.0]).unwrap();
        for v in &p {
            assert_relative_eq!(*v, 1.0 / 3.0, epsilon = 1e-15);
        }
        let p = class_probabilities(&[1000.0, 0.0, 0.0]).unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
        assert_relative_eq!(p[0], 1.0, epsilon = 1e-15);
        assert!(class_probabilities(&[0.0, f64::NAN]).is_err());
        // exp/sum by hand: e^1, e^2, e^3 over their total
        let p = class_probabilities(&[1.0, 2.0, 3.0]).unwrap();
        let expect = [0.090_030_573_170_380_46, 0.244_728_471_054_797_6, 0.665_240_955_774_821_9];
        for (a, b) in p.iter().zip(expect) {
            assert_relative_eq!(*a, b, epsilon = 1e-15);
        }
    }

    fn binary(side: usize, fg: &[usize]) -> Mask {
        let mut bits = vec![false; side * side];
        for &i in fg {
            bits[i] = true;
        }
        Mask::from_binary(side, &bits).unwrap()
    }

    #[test]
    fn dice_perfect_and_disjoint() {
        let y = binary(4, &[0, 1, 4, 5]);
        assert!(dice_loss(&y, &y).unwrap() < 1e-7);
        let other = binary(4, &[10, 11, 14, 15]);
        assert_relative_eq!(dice_loss(&y, &other).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn dice_half_confidence_on_truth() {
        // y foreground = 4 pixels; prediction 0.5 on those, 0 elsewhere.
        // TP = 2, FP = 0, FN = 4 * 0.5 = 2 → 1 − 2/(2 + 1 + ε)
        let y = binary(4, &[0, 1, 2, 3]);
        let fg: Vec<f64> = (0..16).map(|i| if i < 4 { 0.5 } else { 0.0 }).collect();
        let p = Mask::from_foreground(4, &fg).unwrap();
        let expect = 1.0 - 2.0 / (3.0 + DICE_EPS);
        assert_relative_eq!(dice_loss(&y, &p).unwrap(), expect, epsilon = 1e-15);
    }

    #[test]
    fn abs_kl_examples() {
        let y = Mask::from_foreground(1, &[0.9]).unwrap();
        let p = Mask::from_foreground(1, &[0.1]).unwrap();
        let expect = 0.8 * 9.0f64.ln();
        assert_relative_eq!(abs_kl_loss(&y, &p).unwrap(), expect, epsilon = 1e-12);
        assert_relative_eq!(abs_kl_loss(&p, &y).unwrap(), expect, epsilon = 1e-12);
        assert_eq!(abs_kl_loss(&y, &y).unwrap(), 0.0);
    }

    #[test]
    fn adversarial_examples() {
        assert_eq!(g_adv_loss(&[0.0]).unwrap(), 0.0);
        assert_relative_eq!(g_adv_loss(&[1.0]).unwrap(), -(PROB_EPS.ln()), epsilon = 1e-9);
        assert_relative_eq!(g_adv_loss(&[0.5, 0.5]).unwrap(), 2.0f64.ln(), epsilon = 1e-15);
        let (a, b, c) = d_adv_losses(&[0.0, 0.0], &[1.0], &[1.0, 1.0]).unwrap();
        assert_eq!((a, b, c), (0.0, 0.0, 0.0));
        let (a, b, c) = d_adv_losses(&[0.5], &[0.5], &[0.5]).unwrap();
        for v in [a, b, c] {
            assert_relative_eq!(v, 2.0f64.ln(), epsilon = 1e-15);
        }
        // mixed: real [0.2, 0.6] → (−ln 0.8 − ln 0.4)/2
        let (a, b, _) = d_adv_losses(&[0.2, 0.6], &[0.25, 0.5], &[]).unwrap();
        assert_relative_eq!(a, (-(0.8f64).ln() - (0.4f64).ln()) / 2.0, epsilon = 1e-15);
        assert_relative_eq!(b, (-(0.25f64).ln() - (0.5f64).ln()) / 2.0, epsilon = 1e-15);
        assert!(g_adv_loss(&[1.5]).is_err());
    }

    #[test]
    fn supervised_cross_entropy_examples() {
        let l = logits(&[&[50.0, -50.0, -50.0]]);
        assert!(d_supervised_loss(&l, &[0], None).unwrap().0 < 1e-30);
        let l = logits(&[&[0.0, 0.0, 0.0], &[0.0, 0.0, 0.0]]);
        assert_relative_eq!(d_supervised_loss(&l, &[1, 0], None).unwrap().0, 3.0f64.ln(), epsilon = 1e-15);
        assert!(d_supervised_loss(&l, &[2, 0], None).is_err());
        // weights [1, 0] keep only the first sample: −ln softmax([1,2,0])[1]
        let l = logits(&[&[1.0, 2.0, 0.0], &[5.0, -1.0, 0.0]]);
        let single = logits(&[&[1.0, 2.0, 0.0]]);
        let w = d_supervised_loss(&l, &[1, 0], Some(&[1.0, 0.0])).unwrap().0;
        assert_relative_eq!(w, d_supervised_loss(&single, &[1], None).unwrap().0, epsilon = 1e-15);
        let by_hand = (1.0f64.exp() + 2.0f64.exp() + 1.0).ln() - 2.0;
        assert_relative_eq!(w, by_hand, epsilon = 1e-14);
    }

    #[test]
    fn selfsup_examples() {
        let l = logits(&[&[0.0; 6]]);
        assert_relative_eq!(d_selfsup_loss(&l, &[3], None).unwrap().0, 6.0f64.ln(), epsilon = 1e-15);
        let mut perfect = [-60.0; 6];
        perfect[2] = 60.0;
        let l = logits(&[&perfect, &[0.0; 6]]);
        let v = d_selfsup_loss(&l, &[2, 5], None).unwrap().0;
        assert_relative_eq!(v, 6.0f64.ln() / 2.0, epsilon = 1e-12);
        assert!(d_selfsup_loss(&l, &[6, 0], None).is_err());
    }

    #[test]
    fn totals_are_the_documented_combinations() {
        let r = LossReport {
            dice_supervised: 0.3,
            kl_unsupervised: 2.0,
            g_adv_labeled: 0.7,
            g_adv_unlabeled: 0.9,
            d_supervised: 0.5,
            d_selfsup: 1.7,
            d_adv_real: 0.2,
            d_adv_pred_labeled: 0.4,
            d_adv_pred_unlabeled: 0.6,
            ..LossReport::default()
        };
        let w = LossWeights {
            alpha: 0.5,
            lambda_adv: 0.1,
            lambda_self: 2.0,
        };
        assert_relative_eq!(total_g(&r, &w).unwrap(), 0.3 + 0.07 + 0.5 * (2.0 + 0.09), epsilon = 1e-12);
        assert_relative_eq!(total_d(&r, &w).unwrap(), 0.5 + 0.2 + 0.4 + 0.5 * (3.4 + 0.6), epsilon = 1e-12);
        let zero = LossWeights {
            alpha: 0.0,
            lambda_adv: 0.0,
            lambda_self: 0.0,
        };
        assert_eq!(total_g(&r, &zero).unwrap(), 0.3);
        assert_relative_eq!(total_d(&r, &zero).unwrap(), 1.1, epsilon = 1e-15);
        let neg = LossWeights { alpha: -1.0, ..w };
        assert!(total_g(&r, &neg).is_err());
        assert!(total_d(&r, &neg).is_err());
    }

    #[test]
    fn kl_pairing_variants() {
        let y = Tensor::from_vec(&[2, 2, 1, 1], vec![0.1, 0.9, 0.8, 0.2]).unwrap();
        let p = Tensor::from_vec(&[1, 2, 1, 1], vec![0.5, 0.5]).unwrap();
        let (v, g) = abs_kl_batch(&y, &p, KlPairing::Index).unwrap();
        assert_relative_eq!(v, (0.9f64 - 0.5) * (0.9f64 / 0.5).ln(), epsilon = 1e-12);
        assert_eq!(g.data()[0], 0.0);
        let (v, _) = abs_kl_batch(&y, &p, KlPairing::Pooled).unwrap();
        // pooled foreground mean is 0.55
        assert_relative_eq!(v, (0.55f64 - 0.5) * (0.55f64 / 0.5).ln(), epsilon = 1e-12);
    }
}
