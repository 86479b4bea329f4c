//! Dataset directory ingestion and export.
//!
//! Layout: `images/<id>.png|pgm`, `masks/<id>.png|pgm`, `labels.csv` with a
//! header `id,class`. Images without both a mask and a label row load as
//! unlabeled samples.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma};

use super::preprocess::{preprocess, resize_nearest, RawImage};
use super::types::{ClassLabel, Mask, Sample};
use crate::error::{Error, Result};

const EXTENSIONS: [&str; 2] = ["png", "pgm"];

fn ingest_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Ingestion {
        path: path.to_path_buf(),
        message: msg.into(),
    }
}

fn list_rasters(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    if !dir.is_dir() {
        return Err(ingest_err(dir, "directory is missing"));
    }
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        if !matches!(ext.as_deref(), Some(e) if EXTENSIONS.contains(&e)) {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            out.insert(stem.to_string(), path.clone());
        }
    }
    Ok(out)
}

fn read_gray(path: &Path) -> Result<RawImage> {
    let img = image::open(path)?.into_luma16();
    let (w, h) = img.dimensions();
    let values = img.pixels().map(|p| p.0[0] as f64).collect();
    RawImage::new(h as usize, w as usize, values)
}

fn read_labels(path: &Path) -> Result<BTreeMap<String, usize>> {
    let mut labels = BTreeMap::new();
    if !path.exists() {
        return Ok(labels);
    }
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    if headers.len() < 2 || &headers[0] != "id" || &headers[1] != "class" {
        return Err(ingest_err(path, "expected header `id,class`"));
    }
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let id = rec.get(0).unwrap_or_default().trim().to_string();
        let class = rec
            .get(1)
            .unwrap_or_default()
            .trim()
            .parse::<usize>()
            .map_err(|e| ingest_err(path, format!("row {}: bad class index: {e}", row + 2)))?;
        labels.insert(id, class);
    }
    Ok(labels)
}

/// Loads every image under `root`, preprocessed to `target_side`, in
/// lexicographic id order.
pub fn load_dataset(root: &Path, class_count: usize, target_side: usize) -> Result<Vec<Sample>> {
    if !root.is_dir() {
        return Err(ingest_err(root, "dataset root is missing"));
    }
    let images = list_rasters(&root.join("images"))?;
    if images.is_empty() {
        return Err(ingest_err(&root.join("images"), "no images found"));
    }
    let mask_dir = root.join("masks");
    let masks = if mask_dir.is_dir() {
        list_rasters(&mask_dir)?
    } else {
        BTreeMap::new()
    };
    let labels = read_labels(&root.join("labels.csv"))?;

    let mut samples = Vec::with_capacity(images.len());
    for (id, path) in &images {
        let raw = read_gray(path)?;
        let image = preprocess(&raw, target_side).map_err(|e| Error::SampleValidation {
            id: id.clone(),
            message: e.to_string(),
        })?;
        match (masks.get(id), labels.get(id)) {
            (Some(mask_path), Some(&class)) => {
                let raw_mask = read_gray(mask_path)?;
                if raw_mask.height != raw.height || raw_mask.width != raw.width {
                    return Err(Error::SampleValidation {
                        id: id.clone(),
                        message: format!(
                            "mask is {}x{} but image is {}x{}",
                            raw_mask.height, raw_mask.width, raw.height, raw.width
                        ),
                    });
                }
                let label = ClassLabel::new(class, class_count).map_err(|e| Error::SampleValidation {
                    id: id.clone(),
                    message: e.to_string(),
                })?;
                let fg: Vec<bool> = raw_mask.values.iter().map(|&v| v > 0.0).collect();
                let fg = resize_nearest(&fg, raw.height, raw.width, target_side, target_side);
                let mask = Mask::from_binary(target_side, &fg)?;
                samples.push(Sample::labeled(id.clone(), image, mask, label)?);
            }
            _ => samples.push(Sample::unlabeled(id.clone(), image)),
        }
    }
    Ok(samples)
}

/// Writes samples in the layout [`load_dataset`] reads: 8-bit PNG images,
/// 0/255 PNG masks, and `labels.csv` for labeled samples.
pub fn write_dataset(samples: &[Sample], root: &Path) -> Result<()> {
    let img_dir = root.join("images");
    let mask_dir = root.join("masks");
    fs::create_dir_all(&img_dir)?;
    fs::create_dir_all(&mask_dir)?;
    let mut wtr = csv::Writer::from_path(root.join("labels.csv"))?;
    wtr.write_record(["id", "class"])?;
    for s in samples {
        let img = s.image();
        let mut gray = GrayImage::new(img.width() as u32, img.height() as u32);
        for (i, p) in gray.pixels_mut().enumerate() {
            *p = Luma([(img.pixels()[i] * 255.0).round() as u8]);
        }
        gray.save(img_dir.join(format!("{}.png", s.id())))?;
        if let (Some(mask), Some(label)) = (s.mask(), s.label()) {
            let side = mask.side() as u32;
            let mut gm = GrayImage::new(side, side);
            for (i, p) in gm.pixels_mut().enumerate() {
                *p = Luma([if mask.foreground()[i] >= 0.5 { 255 } else { 0 }]);
            }
            gm.save(mask_dir.join(format!("{}.png", s.id())))?;
            wtr.write_record([s.id().to_string(), label.index().to_string()])?;
        }
    }
    wtr.flush()?;
    Ok(())
}
