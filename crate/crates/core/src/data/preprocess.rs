use super::types::Image;
use crate::error::{Error, Result};

/// Raw grayscale raster with arbitrary intensity range.
#[derive(Debug, Clone, PartialEq)]
pub struct RawImage {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl RawImage {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::shape(format!(
                "raw image {height}x{width} needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        Ok(RawImage {
            height,
            width,
            values,
        })
    }
}

impl From<&Image> for RawImage {
    fn from(img: &Image) -> Self {
        RawImage {
            height: img.height(),
            width: img.width(),
            values: img.pixels().to_vec(),
        }
    }
}

/// Source coordinate and weights for half-pixel-centred bilinear sampling.
fn bilinear_taps(dst: usize, src_len: usize, dst_len: usize) -> (usize, usize, f64) {
    let scale = src_len as f64 / dst_len as f64;
    let pos = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(src_len - 1);
    (lo, hi, pos - lo as f64)
}

/// Bilinear resize of a row-major grid.
pub fn resize_bilinear(values: &[f64], h: usize, w: usize, th: usize, tw: usize) -> Vec<f64> {
    let rows: Vec<_> = (0..th).map(|i| bilinear_taps(i, h, th)).collect();
    let cols: Vec<_> = (0..tw).map(|j| bilinear_taps(j, w, tw)).collect();
    let mut out = Vec::with_capacity(th * tw);
    for &(r0, r1, fy) in &rows {
        for &(c0, c1, fx) in &cols {
            let top = values[r0 * w + c0] * (1.0 - fx) + values[r0 * w + c1] * fx;
            let bottom = values[r1 * w + c0] * (1.0 - fx) + values[r1 * w + c1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Nearest-neighbour resize; keeps binary masks binary.
pub fn resize_nearest<T: Copy>(values: &[T], h: usize, w: usize, th: usize, tw: usize) -> Vec<T> {
    let pick = |dst: usize, src_len: usize, dst_len: usize| {
        (((dst as f64 + 0.5) * src_len as f64 / dst_len as f64).floor() as usize).min(src_len - 1)
    };
    let mut out = Vec::with_capacity(th * tw);
    for i in 0..th {
        let r = pick(i, h, th);
        for j in 0..tw {
            out.push(values[r * w + pick(j, w, tw)]);
        }
    }
    out
}

/// Per-image min-max scaling to `[0, 1]`; constant inputs map to zeros.
pub fn normalize_min_max(values: &mut [f64]) {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(hi > lo) {
        values.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let span = hi - lo;
    values.iter_mut().for_each(|v| *v = ((*v - lo) / span).clamp(0.0, 1.0));
}

/// Resize to `target_side × target_side` then min-max normalize.
pub fn preprocess(raw: &RawImage, target_side: usize) -> Result<Image> {
    if raw.height == 0 || raw.width == 0 || raw.values.is_empty() {
        return Err(Error::invalid("cannot preprocess a zero-area image"));
    }
    if target_side == 0 {
        return Err(Error::invalid("target side must be positive"));
    }
    if let Some(v) = raw.values.iter().find(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("non-finite intensity {v}")));
    }
    let mut values = if raw.height == target_side && raw.width == target_side {
        raw.values.clone()
    } else {
        resize_bilinear(&raw.values, raw.height, raw.width, target_side, target_side)
    };
    normalize_min_max(&mut values);
    Image::new(target_side, target_side, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn resizes_to_target_side() {
        let raw = RawImage::new(256, 256, (0..256 * 256).map(|i| (i % 251) as f64).collect()).unwrap();
        let img = preprocess(&raw, 128).unwrap();
        assert_eq!((img.height(), img.width()), (128, 128));
    }

    #[test]
    fn constant_image_maps_to_zero() {
        let raw = RawImage::new(3, 5, vec![42.0; 15]).unwrap();
        let img = preprocess(&raw, 4).unwrap();
        assert!(img.pixels().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn min_max_endpoints() {
        let raw = RawImage::new(2, 2, vec![0.0, 255.0, 0.0, 255.0]).unwrap();
        let img = preprocess(&raw, 2).unwrap();
        assert_eq!(img.pixels(), &[0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn zero_area_is_rejected() {
        let raw = RawImage::new(0, 0, vec![]).unwrap();
        assert!(preprocess(&raw, 4).is_err());
    }

    #[test]
    fn nearest_keeps_binary_values() {
        let v = vec![true, false, false, true];
        let up = resize_nearest(&v, 2, 2, 4, 4);
        assert_eq!(up.iter().filter(|&&b| b).count(), 8);
        assert!(up[0] && up[15] && !up[3]);
    }

    proptest! {
        #[test]
        fn preprocess_is_idempotent(
            h in 1usize..20,
            w in 1usize..20,
            target in 1usize..24,
            seed in any::<u64>(),
        ) {
            let values: Vec<f64> = (0..h * w)
                .map(|i| ((i as u64).wrapping_mul(6364136223846793005).wrapping_add(seed) >> 40) as f64)
                .collect();
            let raw = RawImage::new(h, w, values).unwrap();
            let once = preprocess(&raw, target).unwrap();
            let twice = preprocess(&RawImage::from(&once), target).unwrap();
            prop_assert_eq!(once.pixels(), twice.pixels());
        }
    }
}
