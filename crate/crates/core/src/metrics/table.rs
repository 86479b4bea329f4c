use std::path::Path;

use serde::{Deserialize, Serialize};

use super::classification::{classification_metrics, ClsMetrics};
use super::segmentation::SegMetrics;
use crate::error::Result;

/// Id of the trailing aggregate row in metrics CSV files.
pub const AGGREGATE_ID: &str = "*mean*";

/// Per-sample evaluation record. Segmentation fields are empty for
/// classifier-only methods; `pred_class` is empty for segmenter-only ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub id: String,
    pub ds: Option<f64>,
    pub ji: Option<f64>,
    pub ssim: Option<f64>,
    pub hd: Option<f64>,
    pub prec: Option<f64>,
    pub rec: Option<f64>,
    pub true_class: Option<usize>,
    pub pred_class: Option<usize>,
    /// Foreground pixel counts of the truth and the binarized prediction.
    pub truth_pixels: Option<f64>,
    pub pred_pixels: Option<f64>,
}

impl MetricsRow {
    pub fn new(id: impl Into<String>) -> Self {
        MetricsRow {
            id: id.into(),
            ds: None,
            ji: None,
            ssim: None,
            hd: None,
            prec: None,
            rec: None,
            true_class: None,
            pred_class: None,
            truth_pixels: None,
            pred_pixels: None,
        }
    }

    pub fn with_segmentation(mut self, m: SegMetrics, truth_pixels: usize, pred_pixels: usize) -> Self {
        self.ds = Some(m.ds);
        self.ji = Some(m.ji);
        self.ssim = Some(m.ssim);
        self.hd = Some(m.hd);
        self.prec = Some(m.prec);
        self.rec = Some(m.rec);
        self.truth_pixels = Some(truth_pixels as f64);
        self.pred_pixels = Some(pred_pixels as f64);
        self
    }

    pub fn with_class(mut self, truth: usize, pred: usize) -> Self {
        self.true_class = Some(truth);
        self.pred_class = Some(pred);
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
}

fn mean_of(rows: &[MetricsRow], f: impl Fn(&MetricsRow) -> Option<f64>) -> Option<f64> {
    let vals: Vec<f64> = rows.iter().filter_map(f).collect();
    if vals.is_empty() {
        None
    } else {
        Some(vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

impl MetricsTable {
    pub fn new(rows: Vec<MetricsRow>) -> Self {
        MetricsTable { rows }
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Column means over the rows that carry a value.
    pub fn aggregate(&self) -> MetricsRow {
        let r = &self.rows;
        MetricsRow {
            id: AGGREGATE_ID.to_string(),
            ds: mean_of(r, |x| x.ds),
            ji: mean_of(r, |x| x.ji),
            ssim: mean_of(r, |x| x.ssim),
            hd: mean_of(r, |x| x.hd),
            prec: mean_of(r, |x| x.prec),
            rec: mean_of(r, |x| x.rec),
            true_class: None,
            pred_class: None,
            truth_pixels: mean_of(r, |x| x.truth_pixels),
            pred_pixels: mean_of(r, |x| x.pred_pixels),
        }
    }

    pub fn mean_dice(&self) -> Option<f64> {
        mean_of(&self.rows, |x| x.ds)
    }

    /// Accuracy and per-class F1 over rows with both class fields.
    pub fn classification(&self, class_count: usize) -> Option<ClsMetrics> {
        let (pred, truth): (Vec<usize>, Vec<usize>) = self
            .rows
            .iter()
            .filter_map(|r| Some((r.pred_class?, r.true_class?)))
            .unzip();
        if truth.is_empty() {
            return None;
        }
        classification_metrics(&pred, &truth, class_count).ok()
    }

    pub fn accuracy(&self) -> Option<f64> {
        let pairs: Vec<(usize, usize)> = self
            .rows
            .iter()
            .filter_map(|r| Some((r.pred_class?, r.true_class?)))
            .collect();
        if pairs.is_empty() {
            return None;
        }
        Some(pairs.iter().filter(|(p, t)| p == t).count() as f64 / pairs.len() as f64)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.serialize(self.aggregate())?;
        w.flush()?;
        Ok(())
    }

    /// Reads per-sample rows, dropping the aggregate row.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut rows = Vec::new();
        for rec in r.deserialize() {
            let row: MetricsRow = rec?;
            if row.id != AGGREGATE_ID {
                rows.push(row);
            }
        }
        Ok(MetricsTable { rows })
    }
}
