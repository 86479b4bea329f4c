use crate::error::{Error, Result};

/// Number of segmentation logits per pixel (background, foreground).
pub const MASK_CHANNELS: usize = 2;
pub const BACKGROUND: usize = 0;
pub const FOREGROUND: usize = 1;

/// Single-channel image with intensities in `[0, 1]`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("image has zero area"));
        }
        if pixels.len() != height * width {
            return Err(Error::shape(format!(
                "image {}x{} needs {} pixels, got {}",
                height,
                width,
                height * width,
                pixels.len()
            )));
        }
        if let Some(v) = pixels.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::invalid(format!("image intensity {v} outside [0, 1]")));
        }
        Ok(Image {
            height,
            width,
            pixels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn is_square(&self) -> bool {
        self.height == self.width
    }

    /// Side length; only meaningful for square images.
    pub fn side(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }
}

/// Per-pixel probability vectors over [`MASK_CHANNELS`] logits, stored
/// channel-major (`[k][row][col]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    side: usize,
    probs: Vec<f64>,
}

impl Mask {
    /// One-hot mask from a row-major foreground indicator.
    pub fn from_binary(side: usize, foreground: &[bool]) -> Result<Self> {
        if foreground.len() != side * side {
            return Err(Error::shape(format!(
                "binary mask needs {} pixels, got {}",
                side * side,
                foreground.len()
            )));
        }
        let plane = side * side;
        let mut probs = vec![0.0; MASK_CHANNELS * plane];
        for (i, &f) in foreground.iter().enumerate() {
            if f {
                probs[FOREGROUND * plane + i] = 1.0;
            } else {
                probs[BACKGROUND * plane + i] = 1.0;
            }
        }
        Ok(Mask { side, probs })
    }

    /// Soft mask from channel-major probabilities; each pixel must sum to 1.
    pub fn from_probs(side: usize, probs: Vec<f64>) -> Result<Self> {
        let plane = side * side;
        if probs.len() != MASK_CHANNELS * plane {
            return Err(Error::shape(format!(
                "mask needs {} values, got {}",
                MASK_CHANNELS * plane,
                probs.len()
            )));
        }
        for p in 0..plane {
            let mut total = 0.0;
            for k in 0..MASK_CHANNELS {
                let v = probs[k * plane + p];
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::invalid(format!("mask probability {v} is invalid")));
                }
                total += v;
            }
            if (total - 1.0).abs() > 1e-6 {
                return Err(Error::invalid(format!(
                    "mask pixel {p} sums to {total}, expected 1"
                )));
            }
        }
        Ok(Mask { side, probs })
    }

    /// Two-channel mask from a foreground probability map.
    pub fn from_foreground(side: usize, fg: &[f64]) -> Result<Self> {
        let plane = side * side;
        if fg.len() != plane {
            return Err(Error::shape("foreground map length mismatch"));
        }
        let mut probs = vec![0.0; MASK_CHANNELS * plane];
        for (i, &f) in fg.iter().enumerate() {
            probs[BACKGROUND * plane + i] = 1.0 - f;
            probs[FOREGROUND * plane + i] = f;
        }
        Self::from_probs(side, probs)
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn channel(&self, k: usize) -> &[f64] {
        let plane = self.side * self.side;
        &self.probs[k * plane..(k + 1) * plane]
    }

    pub fn foreground(&self) -> &[f64] {
        self.channel(FOREGROUND)
    }

    /// Foreground indicator after thresholding the foreground probability.
    pub fn binarize(&self, threshold: f64) -> Vec<bool> {
        self.foreground().iter().map(|&v| v >= threshold).collect()
    }

    pub fn foreground_fraction(&self) -> f64 {
        self.foreground().iter().sum::<f64>() / (self.side * self.side) as f64
    }
}

/// Class index in `0..n` for a dataset with `n` real classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ClassLabel(usize);

impl ClassLabel {
    pub fn new(index: usize, class_count: usize) -> Result<Self> {
        if index >= class_count {
            return Err(Error::invalid(format!(
                "class index {index} out of range for {class_count} classes"
            )));
        }
        Ok(ClassLabel(index))
    }

    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Annotation {
    mask: Mask,
    label: ClassLabel,
}

/// One image, labeled with both a mask and a class or with neither.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    id: String,
    image: Image,
    annotation: Option<Annotation>,
}

impl Sample {
    pub fn labeled(id: impl Into<String>, image: Image, mask: Mask, label: ClassLabel) -> Result<Self> {
        let id = id.into();
        if !image.is_square() || mask.side() != image.height() {
            return Err(Error::SampleValidation {
                id,
                message: format!(
                    "mask side {} does not match image {}x{}",
                    mask.side(),
                    image.height(),
                    image.width()
                ),
            });
        }
        Ok(Sample {
            id,
            image,
            annotation: Some(Annotation { mask, label }),
        })
    }

    pub fn unlabeled(id: impl Into<String>, image: Image) -> Self {
        Sample {
            id: id.into(),
            image,
            annotation: None,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn image(&self) -> &Image {
        &self.image
    }

    pub fn mask(&self) -> Option<&Mask> {
        self.annotation.as_ref().map(|a| &a.mask)
    }

    pub fn label(&self) -> Option<ClassLabel> {
        self.annotation.as_ref().map(|a| a.label)
    }

    pub fn is_labeled(&self) -> bool {
        self.annotation.is_some()
    }

    /// The same image with mask and label physically removed.
    pub fn strip_labels(&self) -> Sample {
        Sample::unlabeled(self.id.clone(), self.image.clone())
    }
}
