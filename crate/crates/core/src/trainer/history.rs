use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::losses::LossReport;
use crate::metrics::MetricsRow;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Global step index, starting at 0.
    pub step: usize,
    pub epoch: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    /// Annealing threshold used at this step (1 when annealing is off or
    /// the method has no discriminator).
    pub eta: f64,
    pub losses: LossReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub wall_seconds: f64,
    /// Aggregate validation metrics.
    pub val: MetricsRow,
    pub val_accuracy: Option<f64>,
    /// Validation Dice for segmenting methods, accuracy otherwise.
    pub selection_score: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: Option<usize>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl TrainHistory {
    /// Mean of a per-step quantity over one epoch.
    pub fn epoch_mean(&self, epoch: usize, f: impl Fn(&StepRecord) -> f64) -> Option<f64> {
        let vals: Vec<f64> = self.steps.iter().filter(|s| s.epoch == epoch).map(f).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// One row per step: step, epoch, learning rates, η, every loss field.
    pub fn write_steps_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        let mut header = vec!["step", "epoch", "lr_g", "lr_d", "eta"];
        header.extend(LossReport::FIELDS);
        writeln!(out, "{}", header.join(","))?;
        for s in &self.steps {
            let mut row = vec![
                s.step.to_string(),
                s.epoch.to_string(),
                s.lr_g.to_string(),
                s.lr_d.to_string(),
                s.eta.to_string(),
            ];
            row.extend(s.losses.values().iter().map(|v| v.to_string()));
            writeln!(out, "{}", row.join(","))?;
        }
        out.flush()?;
        Ok(())
    }

    /// One row per epoch of aggregate validation metrics. Wall-clock time is
    /// kept out so the file is reproducible; see [`Self::write_timing_csv`].
    pub fn write_epochs_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "epoch,steps,ds,ji,ssim,hd,prec,rec,accuracy,selection_score,selected")?;
        for e in &self.epochs {
            let v = &e.val;
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                e.epoch,
                e.steps,
                opt(v.ds),
                opt(v.ji),
                opt(v.ssim),
                opt(v.hd),
                opt(v.prec),
                opt(v.rec),
                opt(e.val_accuracy),
                opt(e.selection_score),
                u8::from(self.best_epoch == Some(e.epoch)),
            )?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_timing_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "epoch,steps,wall_seconds")?;
        for e in &self.epochs {
            writeln!(out, "{},{},{}", e.epoch, e.steps, e.wall_seconds)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn wall_seconds(&self) -> f64 {
        self.epochs.iter().map(|e| e.wall_seconds).sum()
    }
}

