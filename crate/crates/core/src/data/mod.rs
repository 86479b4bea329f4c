//! Samples, ingestion, preprocessing, splitting, and synthetic data.

mod ingest;
mod preprocess;
mod split;
mod synthetic;
mod types;

pub use ingest::{load_dataset, write_dataset};
pub use preprocess::{normalize_min_max, preprocess, resize_bilinear, resize_nearest, RawImage};
pub use split::{
    fully_labeled_split, read_manifest, stratified_split, write_manifest, DatasetSplit, SplitFractions,
    MAX_LABELED_FRACTION,
};
pub use synthetic::{make_synthetic, MIN_SYNTHETIC_SIDE};
pub use types::{ClassLabel, Image, Mask, Sample, BACKGROUND, FOREGROUND, MASK_CHANNELS};
