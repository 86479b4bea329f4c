use serde::{Deserialize, Serialize};

use crate::data::Mask;
use crate::error::{Error, Result};

/// SSIM stabilizers for unit dynamic range.
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;
const SSIM_WINDOW: usize = 11;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegMetrics {
    pub ds: f64,
    pub ji: f64,
    pub ssim: f64,
    /// Average Hausdorff distance in pixels.
    pub hd: f64,
    pub prec: f64,
    pub rec: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Overlap, boundary, and structural metrics of a prediction against the
/// truth. Hard metrics use the prediction binarized at `threshold`; SSIM uses
/// the soft foreground maps.
pub fn segmentation_metrics(y: &Mask, y_hat: &Mask, threshold: f64) -> Result<SegMetrics> {
    if y.side() != y_hat.side() {
        return Err(Error::shape(format!(
            "mask sides {} and {} differ",
            y.side(),
            y_hat.side()
        )));
    }
    let side = y.side();
    let a = y.binarize(0.5);
    let b = y_hat.binarize(threshold);
    let na = a.iter().filter(|v| **v).count() as f64;
    let nb = b.iter().filter(|v| **v).count() as f64;
    let inter = a.iter().zip(&b).filter(|(x, y)| **x && **y).count() as f64;
    let union = na + nb - inter;
    let ssim = ssim(y.foreground(), y_hat.foreground(), side);
    if na == 0.0 && nb == 0.0 {
        return Ok(SegMetrics {
            ds: 1.0,
            ji: 1.0,
            ssim,
            hd: 0.0,
            prec: 1.0,
            rec: 1.0,
        });
    }
    Ok(SegMetrics {
        ds: ratio(2.0 * inter, na + nb),
        ji: ratio(inter, union),
        ssim,
        hd: average_hausdorff(&a, &b, side),
        prec: ratio(inter, nb),
        rec: ratio(inter, na),
    })
}

/// Symmetric mean of the two directed average nearest-neighbour distances.
/// Zero when both sets are empty; the image diagonal when exactly one is.
pub fn average_hausdorff(a: &[bool], b: &[bool], side: usize) -> f64 {
    let any_a = a.iter().any(|v| *v);
    let any_b = b.iter().any(|v| *v);
    match (any_a, any_b) {
        (false, false) => 0.0,
        (true, true) => 0.5 * (directed_average(a, b, side) + directed_average(b, a, side)),
        _ => (2.0 * (side as f64) * (side as f64)).sqrt(),
    }
}

/// Mean over pixels of `from` of the Euclidean distance to the nearest pixel
/// of `to`.
fn directed_average(from: &[bool], to: &[bool], side: usize) -> f64 {
    let dist2 = squared_distance_transform(to, side);
    let mut total = 0.0;
    let mut count = 0usize;
    for (i, &f) in from.iter().enumerate() {
        if f {
            total += dist2[i].sqrt();
            count += 1;
        }
    }
    total / count as f64
}

/// Exact squared Euclidean distance to the nearest set pixel, by separable
/// lower envelopes of parabolas.
pub fn squared_distance_transform(set: &[bool], side: usize) -> Vec<f64> {
    // Larger than any in-image squared distance and exact in f64.
    let far = 4.0 * (side * side) as f64;
    let mut grid: Vec<f64> = set.iter().map(|&v| if v { 0.0 } else { far }).collect();
    let mut line = vec![0.0; side];
    let mut out = vec![0.0; side];
    for c in 0..side {
        for r in 0..side {
            line[r] = grid[r * side + c];
        }
        envelope_1d(&line, &mut out);
        for r in 0..side {
            grid[r * side + c] = out[r];
        }
    }
    for r in 0..side {
        line.copy_from_slice(&grid[r * side..(r + 1) * side]);
        envelope_1d(&line, &mut out);
        grid[r * side..(r + 1) * side].copy_from_slice(&out);
    }
    grid
}

fn envelope_1d(f: &[f64], d: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let cross = |q: usize, p: usize| {
        let (qf, pf) = (q as f64, p as f64);
        ((f[q] + qf * qf) - (f[p] + pf * pf)) / (2.0 * (qf - pf))
    };
    for q in 1..n {
        let mut s = cross(q, v[k]);
        while s <= z[k] {
            k -= 1;
            s = cross(q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, out) in d.iter_mut().enumerate() {
        let qf = q as f64;
        while z[k + 1] < qf {
            k += 1;
        }
        let p = v[k] as f64;
        *out = (qf - p) * (qf - p) + f[v[k]];
    }
}

/// Mean SSIM over every valid `w×w` window (w = min(11, side)) with uniform
/// weights and population moments, clamped to `[0, 1]`.
pub fn ssim(x: &[f64], y: &[f64], side: usize) -> f64 {
    let w = SSIM_WINDOW.min(side);
    let sat = |f: &dyn Fn(usize) -> f64| {
        let s1 = side + 1;
        let mut t = vec![0.0; s1 * s1];
        for r in 0..side {
            for c in 0..side {
                t[(r + 1) * s1 + c + 1] = f(r * side + c) + t[r * s1 + c + 1] + t[(r + 1) * s1 + c] - t[r * s1 + c];
            }
        }
        t
    };
    let sx = sat(&|i| x[i]);
    let sy = sat(&|i| y[i]);
    let sxx = sat(&|i| x[i] * x[i]);
    let syy = sat(&|i| y[i] * y[i]);
    let sxy = sat(&|i| x[i] * y[i]);
    let s1 = side + 1;
    let area = (w * w) as f64;
    let window_sum = |t: &[f64], r: usize, c: usize| {
        t[(r + w) * s1 + c + w] - t[r * s1 + c + w] - t[(r + w) * s1 + c] + t[r * s1 + c]
    };
    let mut total = 0.0;
    let positions = side - w + 1;
    for r in 0..positions {
        for c in 0..positions {
            let mx = window_sum(&sx, r, c) / area;
            let my = window_sum(&sy, r, c) / area;
            let vx = (window_sum(&sxx, r, c) / area - mx * mx).max(0.0);
            let vy = (window_sum(&syy, r, c) / area - my * my).max(0.0);
            let cov = window_sum(&sxy, r, c) / area - mx * my;
            total += ((2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
        }
    }
    (total / (positions * positions) as f64).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(side: usize, fg: &[usize]) -> Mask {
        let mut bits = vec![false; side * side];
        for &i in fg {
            bits[i] = true;
        }
        Mask::from_binary(side, &bits).unwrap()
    }

    #[test]
    fn identity_is_perfect() {
        let m = mask(8, &[9, 10, 17, 18, 30]);
        let s = segmentation_metrics(&m, &m, 0.5).unwrap();
        assert_eq!((s.ds, s.ji, s.hd, s.prec, s.rec), (1.0, 1.0, 0.0, 1.0, 1.0));
        assert!((s.ssim - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_masks() {
        let s = segmentation_metrics(&mask(4, &[0]), &mask(4, &[15]), 0.5).unwrap();
        assert_eq!((s.ds, s.ji, s.prec, s.rec), (0.0, 0.0, 0.0, 0.0));
        assert!((s.hd - 18f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn empty_conventions() {
        let e = mask(4, &[]);
        let s = segmentation_metrics(&e, &e, 0.5).unwrap();
        assert_eq!((s.ds, s.ji, s.hd, s.prec, s.rec), (1.0, 1.0, 0.0, 1.0, 1.0));
        let s = segmentation_metrics(&e, &mask(4, &[3]), 0.5).unwrap();
        assert_eq!((s.ds, s.ji), (0.0, 0.0));
        assert!((s.hd - 32f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn distance_transform_small_case() {
        let mut set = vec![false; 9];
        set[0] = true;
        let d = squared_distance_transform(&set, 3);
        assert_eq!(d, vec![0.0, 1.0, 4.0, 1.0, 2.0, 5.0, 4.0, 5.0, 8.0]);
    }

    #[test]
    fn window_shrinks_on_small_images() {
        let x = [0.1, 0.5, 0.9, 0.3];
        assert!((ssim(&x, &x, 2) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn side_mismatch() {
        assert!(segmentation_metrics(&mask(4, &[]), &mask(5, &[]), 0.5).is_err());
    }
}
