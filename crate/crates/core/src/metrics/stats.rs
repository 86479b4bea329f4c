use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor, Normal, StudentsT};

use crate::error::{Error, Result};

/// Below this many nonzero differences the signed-rank test enumerates the
/// exact null distribution.
pub const WILCOXON_EXACT_BELOW: usize = 20;
const LOA_Z: f64 = 1.96;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatReport {
    pub test: String,
    pub statistic: f64,
    pub p_value: f64,
    /// Set when the test is undefined for the input (zero variance or all
    /// differences zero).
    pub degenerate: bool,
    pub mean_diff: Option<f64>,
    pub loa_lower: Option<f64>,
    pub loa_upper: Option<f64>,
    pub r: Option<f64>,
}

impl StatReport {
    fn new(test: &str, statistic: f64, p_value: f64) -> Self {
        StatReport {
            test: test.to_string(),
            statistic,
            p_value: p_value.clamp(0.0, 1.0),
            degenerate: false,
            mean_diff: None,
            loa_lower: None,
            loa_upper: None,
            r: None,
        }
    }

    fn degenerate(mut self) -> Self {
        self.degenerate = true;
        self
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample variance (n − 1 denominator).
fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}

fn two_sided_t(t: f64, df: f64) -> f64 {
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    2.0 * dist.sf(t.abs())
}

fn check_finite(series: &[&[f64]]) -> Result<()> {
    if series.iter().any(|s| s.iter().any(|v| !v.is_finite())) {
        return Err(Error::invalid("statistical test input contains non-finite values"));
    }
    Ok(())
}

fn check_paired(a: &[f64], b: &[f64], min: usize) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("paired series of lengths {} and {}", a.len(), b.len())));
    }
    if a.len() < min {
        return Err(Error::invalid(format!("paired test needs at least {min} pairs, got {}", a.len())));
    }
    check_finite(&[a, b])
}

/// Variance at rounding-noise level relative to the values' magnitude.
fn negligible_spread(v: &[f64], var: f64) -> bool {
    let scale = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    var.sqrt() <= 1e-12 * scale || var == 0.0
}

/// One-sample t-test of `d` against zero. Zero variance is degenerate:
/// statistic 0 and p = 1 when the mean is zero, ±∞ and p = 0 otherwise.
fn one_sample_t(name: &str, d: &[f64]) -> StatReport {
    let m = mean(d);
    let var = variance(d);
    if negligible_spread(d, var) {
        return if m == 0.0 {
            StatReport::new(name, 0.0, 1.0).degenerate()
        } else {
            StatReport::new(name, m.signum() * f64::INFINITY, 0.0).degenerate()
        };
    }
    let t = m / (var / d.len() as f64).sqrt();
    StatReport::new(name, t, two_sided_t(t, (d.len() - 1) as f64))
}

pub fn paired_t(a: &[f64], b: &[f64]) -> Result<StatReport> {
    check_paired(a, b, 2)?;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    Ok(one_sample_t("paired_t", &d))
}

/// Midranks (1-based) of `values` and the tie groups' sizes.
fn midranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        ties.push(end - start);
        start = end;
    }
    (ranks, ties)
}

/// Two-sided Wilcoxon signed-rank test on `a − b`. Zero differences are
/// dropped. Exact null enumeration below [`WILCOXON_EXACT_BELOW`] nonzero
/// differences, normal approximation with tie correction otherwise.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<StatReport> {
    check_paired(a, b, 1)?;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|v| *v != 0.0).collect();
    if d.is_empty() {
        return Ok(StatReport::new("wilcoxon", 0.0, 1.0).degenerate());
    }
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let (ranks, ties) = midranks(&abs);
    let w_plus: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).fold(0.0, |acc, (_, r)| acc + r);
    let n = d.len();
    let p = if n < WILCOXON_EXACT_BELOW {
        exact_signed_rank_p(&ranks, w_plus)
    } else {
        let nf = n as f64;
        let mu = nf * (nf + 1.0) / 4.0;
        let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
        let z = (w_plus - mu) / var.sqrt();
        let normal = Normal::new(0.0, 1.0).expect("standard normal");
        2.0 * normal.sf(z.abs())
    };
    Ok(StatReport::new("wilcoxon", w_plus, p))
}

/// `2·min(P(W ≤ w), P(W ≥ w))` under equally likely sign assignments.
/// Midranks are doubled so that every rank sum is an integer.
fn exact_signed_rank_p(ranks: &[f64], w_plus: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let max: usize = doubled.iter().sum();
    let mut counts = vec![0.0f64; max + 1];
    counts[0] = 1.0;
    for &r in &doubled {
        for s in (r..=max).rev() {
            counts[s] += counts[s - r];
        }
    }
    let total: f64 = counts.iter().sum();
    let w = (2.0 * w_plus).round() as usize;
    let lower: f64 = counts[..=w].iter().sum::<f64>() / total;
    let upper: f64 = counts[w..].iter().sum::<f64>() / total;
    (2.0 * lower.min(upper)).min(1.0)
}

/// Paired t-test and Wilcoxon signed-rank test on equal-length series of at
/// least five values.
pub fn paired_tests(a: &[f64], b: &[f64]) -> Result<(StatReport, StatReport)> {
    check_paired(a, b, 5)?;
    Ok((paired_t(a, b)?, wilcoxon_signed_rank(a, b)?))
}

/// One-way analysis of variance across groups.
pub fn one_way_anova(groups: &[&[f64]]) -> Result<StatReport> {
    if groups.len() < 2 {
        return Err(Error::invalid("ANOVA needs at least two groups"));
    }
    if groups.iter().any(|g| g.len() < 2) {
        return Err(Error::invalid("every ANOVA group needs at least two values"));
    }
    check_finite(groups)?;
    let k = groups.len();
    let n: usize = groups.iter().map(|g| g.len()).sum();
    let grand = groups.iter().flat_map(|g| g.iter()).sum::<f64>() / n as f64;
    let ssb: f64 = groups
        .iter()
        .map(|g| {
            let m = mean(g);
            g.len() as f64 * (m - grand) * (m - grand)
        })
        .sum();
    let ssw: f64 = groups
        .iter()
        .map(|g| {
            let m = mean(g);
            g.iter().map(|x| (x - m) * (x - m)).sum::<f64>()
        })
        .sum();
    let (df1, df2) = ((k - 1) as f64, (n - k) as f64);
    if ssw == 0.0 {
        return Ok(if ssb == 0.0 {
            StatReport::new("anova", 0.0, 1.0).degenerate()
        } else {
            StatReport::new("anova", f64::INFINITY, 0.0).degenerate()
        });
    }
    let f = (ssb / df1) / (ssw / df2);
    let dist = FisherSnedecor::new(df1, df2).expect("positive degrees of freedom");
    Ok(StatReport::new("anova", f, dist.sf(f)))
}

/// Student two-sample t-test with pooled variance.
pub fn independent_t(a: &[f64], b: &[f64]) -> Result<StatReport> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::invalid("two-sample t-test needs at least two values per group"));
    }
    check_finite(&[a, b])?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let pooled = ((na - 1.0) * variance(a) + (nb - 1.0) * variance(b)) / (na + nb - 2.0);
    let diff = mean(a) - mean(b);
    if pooled == 0.0 {
        return Ok(if diff == 0.0 {
            StatReport::new("independent_t", 0.0, 1.0).degenerate()
        } else {
            StatReport::new("independent_t", diff.signum() * f64::INFINITY, 0.0).degenerate()
        });
    }
    let t = diff / (pooled * (1.0 / na + 1.0 / nb)).sqrt();
    Ok(StatReport::new("independent_t", t, two_sided_t(t, na + nb - 2.0)))
}

/// One point of a Bland-Altman scatter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgreementPoint {
    pub mean: f64,
    /// `pred − truth`.
    pub diff: f64,
}

/// Bias and 95% limits of agreement of `pred` against `truth`. The p-value
/// is a one-sample t-test of zero bias.
pub fn bland_altman(truth: &[f64], pred: &[f64]) -> Result<(StatReport, Vec<AgreementPoint>)> {
    check_paired(truth, pred, 2)?;
    let points: Vec<AgreementPoint> = truth
        .iter()
        .zip(pred)
        .map(|(t, p)| AgreementPoint {
            mean: 0.5 * (t + p),
            diff: p - t,
        })
        .collect();
    let d: Vec<f64> = points.iter().map(|p| p.diff).collect();
    let bias = mean(&d);
    let sd = variance(&d).sqrt();
    let mut report = one_sample_t("bland_altman", &d);
    report.statistic = bias;
    report.mean_diff = Some(bias);
    report.loa_lower = Some(bias - LOA_Z * sd);
    report.loa_upper = Some(bias + LOA_Z * sd);
    Ok((report, points))
}

/// Pearson correlation with a t-distribution p-value. Zero variance in
/// either series is degenerate: r = 0, p = 1.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<StatReport> {
    check_paired(a, b, 3)?;
    let (ma, mb) = (mean(a), mean(b));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        let mut rep = StatReport::new("pearson", 0.0, 1.0).degenerate();
        rep.r = Some(0.0);
        return Ok(rep);
    }
    let r = (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0);
    let df = (a.len() - 2) as f64;
    let p = if r.abs() == 1.0 {
        0.0
    } else if df == 0.0 {
        1.0
    } else {
        two_sided_t(r * (df / (1.0 - r * r)).sqrt(), df)
    };
    let mut rep = StatReport::new("pearson", r, p);
    rep.r = Some(r);
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_series() {
        let a = [0.1, 0.5, 0.3, 0.9, 0.7];
        let (t, w) = paired_tests(&a, &a).unwrap();
        assert_eq!((t.statistic, t.p_value), (0.0, 1.0));
        assert!(w.degenerate && w.p_value == 1.0);
    }

    #[test]
    fn constant_shift_is_degenerate_for_t() {
        let b: Vec<f64> = (0..30).map(|i| i as f64 * 0.1).collect();
        let a: Vec<f64> = b.iter().map(|v| v + 1.0).collect();
        let (t, w) = paired_tests(&a, &b).unwrap();
        assert!(t.degenerate);
        assert!(!w.degenerate && w.p_value < 1e-4);
    }

    #[test]
    fn too_short() {
        assert!(paired_tests(&[1.0; 4], &[2.0; 4]).is_err());
    }

    #[test]
    fn anova_identical_groups() {
        let g = [1.0, 2.0, 3.0];
        let r = one_way_anova(&[&g, &g, &g]).unwrap();
        assert_eq!((r.statistic, r.p_value), (0.0, 1.0));
    }

    #[test]
    fn anova_hand_fixture() {
        // means 2, 5, 8; grand 5; SSB = 3·(9+0+9) = 54; SSW = 2+2+2 = 6
        // F = (54/2)/(6/6) = 27
        let r = one_way_anova(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0], &[7.0, 8.0, 9.0]]).unwrap();
        assert!((r.statistic - 27.0).abs() < 1e-12);
        assert!(r.p_value < 0.01);
    }

    #[test]
    fn two_group_anova_is_squared_t() {
        let a = [1.0, 2.5, 3.1, 4.7, 2.2];
        let b = [2.0, 4.5, 5.1, 3.3];
        let f = one_way_anova(&[&a, &b]).unwrap();
        let t = independent_t(&a, &b).unwrap();
        assert!((f.statistic - t.statistic * t.statistic).abs() < 1e-10);
        assert!((f.p_value - t.p_value).abs() < 1e-10);
    }

    #[test]
    fn bland_altman_constant_offset() {
        let truth = [100.0, 200.0, 150.0];
        let pred: Vec<f64> = truth.iter().map(|v| v + 10.0).collect();
        let (r, pts) = bland_altman(&truth, &pred).unwrap();
        assert_eq!(r.mean_diff, Some(10.0));
        assert_eq!(r.loa_lower, Some(10.0));
        assert_eq!(r.loa_upper, Some(10.0));
        assert_eq!(pts[0], AgreementPoint { mean: 105.0, diff: 10.0 });
        let (r, _) = bland_altman(&truth, &truth).unwrap();
        assert_eq!((r.mean_diff, r.loa_lower, r.loa_upper), (Some(0.0), Some(0.0), Some(0.0)));
    }

    #[test]
    fn pearson_extremes() {
        let a = [1.0, 2.0, 4.0, 8.0];
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        assert!((pearson(&a, &a).unwrap().statistic - 1.0).abs() < 1e-15);
        assert!((pearson(&a, &neg).unwrap().statistic + 1.0).abs() < 1e-15);
        assert!(pearson(&a, &[1.0; 4]).unwrap().degenerate);
    }

    #[test]
    fn pearson_hand_fixture() {
        // a = [1,2,3], b = [1,3,2]: cov sum = 1, var sums 2 and 2 → r = 0.5
        let r = pearson(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap();
        assert!((r.statistic - 0.5).abs() < 1e-15);
    }

    #[test]
    fn exact_p_for_all_positive() {
        // n = 5, all differences positive: P(W = 15) = 1/32, two-sided 1/16
        let a = [2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [1.0, 1.0, 1.0, 1.0, 1.0];
        let w = wilcoxon_signed_rank(&a, &b).unwrap();
        assert_eq!(w.statistic, 15.0);
        assert!((w.p_value - 1.0 / 16.0).abs() < 1e-15);
    }
}
