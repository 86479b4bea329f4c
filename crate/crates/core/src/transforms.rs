//! Geometric transforms that manufacture proxy labels for unlabeled images.

use rand::Rng;

use crate::data::Image;
use crate::error::{Error, Result};
use crate::rng;

/// Fixed, ordered transform catalog. Index 0 is the identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TransformId {
    Rot0 = 0,
    Rot90 = 1,
    Rot180 = 2,
    Rot270 = 3,
    HFlip = 4,
    VFlip = 5,
}

impl TransformId {
    pub const COUNT: usize = 6;
    pub const ALL: [TransformId; 6] = [
        TransformId::Rot0,
        TransformId::Rot90,
        TransformId::Rot180,
        TransformId::Rot270,
        TransformId::HFlip,
        TransformId::VFlip,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::invalid(format!("transform index {i} out of range")))
    }

    /// Source pixel `(row, col)` that lands at `(r, c)` in an `n × n` output.
    fn source(self, r: usize, c: usize, n: usize) -> (usize, usize) {
        let last = n - 1;
        match self {
            TransformId::Rot0 => (r, c),
            // counter-clockwise quarter turn
            TransformId::Rot90 => (c, last - r),
            TransformId::Rot180 => (last - r, last - c),
            TransformId::Rot270 => (last - c, r),
            TransformId::HFlip => (r, last - c),
            TransformId::VFlip => (last - r, c),
        }
    }
}

/// Applies `tid` to a row-major `n × n` grid.
pub fn transform_grid<T: Copy>(values: &[T], n: usize, tid: TransformId) -> Vec<T> {
    let mut out = Vec::with_capacity(n * n);
    for r in 0..n {
        for c in 0..n {
            let (sr, sc) = tid.source(r, c, n);
            out.push(values[sr * n + sc]);
        }
    }
    out
}

pub fn apply_transform(image: &Image, tid: TransformId) -> Result<Image> {
    if !image.is_square() {
        return Err(Error::shape(format!(
            "transforms need a square image, got {}x{}",
            image.height(),
            image.width()
        )));
    }
    let n = image.side();
    Image::new(n, n, transform_grid(image.pixels(), n, tid))
}

/// Assigns each image a uniformly drawn transform and returns the
/// transformed images with their proxy labels.
pub fn sample_proxy_batch(images: &[Image], seed: u64) -> Result<Vec<(Image, TransformId)>> {
    if images.is_empty() {
        return Err(Error::invalid("cannot build a proxy batch from no images"));
    }
    let mut rng = rng::stream(seed, "proxy-batch", &[]);
    images
        .iter()
        .map(|img| {
            let tid = TransformId::ALL[rng.gen_range(0..TransformId::COUNT)];
            Ok((apply_transform(img, tid)?, tid))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn img(n: usize, seed: u64) -> Image {
        let px = (0..n * n)
            .map(|i| ((i as u64 * 2654435761 + seed) % 1000) as f64 / 999.0)
            .collect();
        Image::new(n, n, px).unwrap()
    }

    fn apply(x: &Image, t: TransformId) -> Image {
        apply_transform(x, t).unwrap()
    }

    #[test]
    fn identity_is_identity() {
        let x = img(5, 1);
        assert_eq!(apply(&x, TransformId::Rot0), x);
    }

    #[test]
    fn four_quarter_turns() {
        let x = img(6, 2);
        let mut y = x.clone();
        for _ in 0..4 {
            y = apply(&y, TransformId::Rot90);
        }
        assert_eq!(y, x);
    }

    #[test]
    fn flips_are_involutions() {
        let x = img(4, 3);
        assert_eq!(apply(&apply(&x, TransformId::HFlip), TransformId::HFlip), x);
        assert_eq!(apply(&apply(&x, TransformId::VFlip), TransformId::VFlip), x);
    }

    #[test]
    fn rot90_moves_top_right_to_top_left() {
        // [[a, b], [c, d]] rotated a quarter turn counter-clockwise is [[b, d], [a, c]]
        let x = Image::new(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(apply(&x, TransformId::Rot90).pixels(), &[0.2, 0.4, 0.1, 0.3]);
    }

    #[test]
    fn non_square_rejected() {
        let x = Image::new(2, 3, vec![0.0; 6]).unwrap();
        assert!(apply_transform(&x, TransformId::Rot90).is_err());
    }

    #[test]
    fn empty_batch_rejected() {
        assert!(sample_proxy_batch(&[], 1).is_err());
    }

    #[test]
    fn single_image_batch() {
        let out = sample_proxy_batch(&[img(4, 0)], 9).unwrap();
        assert_eq!(out.len(), 1);
        assert!(out[0].1.index() < TransformId::COUNT);
    }

    #[test]
    fn proxy_assignment_is_deterministic() {
        let batch: Vec<Image> = (0..20).map(|i| img(4, i)).collect();
        let a: Vec<_> = sample_proxy_batch(&batch, 5).unwrap().into_iter().map(|p| p.1).collect();
        let b: Vec<_> = sample_proxy_batch(&batch, 5).unwrap().into_iter().map(|p| p.1).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn proxy_labels_are_close_to_uniform() {
        let batch: Vec<Image> = (0..6000).map(|_| Image::new(2, 2, vec![0.0; 4]).unwrap()).collect();
        let mut counts = [0usize; TransformId::COUNT];
        for (_, t) in sample_proxy_batch(&batch, 77).unwrap() {
            counts[t.index()] += 1;
        }
        let p: f64 = 1.0 / 6.0;
        let mean = 6000.0 * p;
        let sd = (6000.0 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - mean).abs() < 3.0 * sd, "{counts:?}");
        }
        // Pearson chi-square with 5 dof; 99.9th percentile is 20.52.
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - mean).powi(2) / mean).sum();
        assert!(chi2 < 20.52, "chi2 {chi2}");
    }

    #[test]
    fn proxy_label_is_recoverable_for_asymmetric_images() {
        let x = img(5, 11);
        for t in TransformId::ALL {
            let y = apply(&x, t);
            let matches: Vec<_> = TransformId::ALL.iter().filter(|&&u| apply(&x, u) == y).collect();
            assert_eq!(matches, vec![&t]);
        }
    }

    proptest! {
        #[test]
        fn transforms_are_bijections(n in 1usize..9, seed in any::<u64>(), t in 0usize..6) {
            let tid = TransformId::from_index(t).unwrap();
            let x = img(n, seed % 10_000);
            let y = apply(&x, tid);
            let mut a = x.pixels().to_vec();
            let mut b = y.pixels().to_vec();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            prop_assert_eq!(a.iter().sum::<f64>(), b.iter().sum::<f64>());
            prop_assert_eq!(a, b);
            let inverse = match tid {
                TransformId::Rot90 => TransformId::Rot270,
                TransformId::Rot270 => TransformId::Rot90,
                other => other,
            };
            let back = apply(&y, inverse);
            if matches!(tid, TransformId::Rot0) {
                prop_assert_eq!(&y, &x);
            }
            prop_assert_eq!(back, x);
        }
    }
}
