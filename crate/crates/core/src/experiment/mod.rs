//! Labeled-fraction sweeps: a flat key-value config, one content-addressed
//! directory per (method, fraction, seed) run, and a report layer that
//! reads only the run directories.
//!
//! Config grammar: one `key = value` per line; `#` starts a comment line;
//! lists are comma separated; relative paths resolve against the config
//! file's directory.
//!
//! | key | value |
//! |-----|-------|
//! | `dataset.dir` | directory of `images/` and `masks/` plus `labels.csv` |
//! | `dataset.synthetic.count`, `dataset.synthetic.seed` | generated data instead of a directory |
//! | `dataset.side`, `dataset.classes` | working resolution (64) and class count (2) |
//! | `split.validation`, `split.test` | held-out fractions (0.1, 0.2) |
//! | `methods` | subset of `S4MTL, S2MTL, UMTL, UNET, CONVNET` |
//! | `fractions` | subset of `0.05, 0.1, 0.2, 0.3, 0.5` |
//! | `fractions.<METHOD>` | per-method list; supervised methods may use `1.0` |
//! | `seeds` | split and training seeds |
//! | `output` | results directory |
//! | `jobs` | concurrent runs (1) |
//! | `train.*` | `epochs`, `batch_size`, `lr_g`, `beta1_g`, `lr_d`, `beta1_d`, `beta2`, `adam_eps`, `decay_every`, `decay_g`, `decay_d`, `alpha`, `lambda_adv`, `lambda_self`, `kl_pairing` (`index` or `pooled`), `tsa`, `tsa_literal`, `tsa_dataset_size` |
//! | `generator.*` | `depth`, `base_channels`, `dropout` |
//! | `discriminator.*` | `depth`, `base_channels` (also the single-task classifier) |

mod config;
mod figures;
mod runner;
mod summary;

use std::path::{Path, PathBuf};

pub use config::{DatasetSource, ExperimentConfig, RunSpec, FULL_FRACTION, PROTOCOL_FRACTIONS};
pub use figures::{AgreementData, BoxData, FigureData, LineData};
pub use runner::{
    load_samples, run_dir, run_experiment, split_for, ExperimentSummary, RunManifest, RunOptions, RunOutcome,
    RunRecord, CHECKPOINT_FILE, HISTORY_FILE, MANIFEST_FILE, RUNS_DIR, RUN_ARTIFACTS, SPLIT_FILE, TEST_FILE,
    TIMING_FILE, VAL_FILE,
};
pub use summary::{
    discover, fraction_label, groups, reference_group, render_results_text, result_rows, statistics,
    write_summary, Discovery, Group, ResultRow, RunResult, StatRow, Summary, RESULTS_CSV, RESULTS_TXT,
    STATS_CSV,
};

use crate::error::Result;

pub const FIGURES_DIR: &str = "figures";

#[derive(Debug, Clone)]
pub struct Report {
    pub summary: Summary,
    pub figures: Vec<PathBuf>,
}

/// Rewrites the tables and statistics of a results directory and renders
/// its figures into `figures/`. Incomplete runs are skipped and listed.
pub fn report(output: &Path) -> Result<Report> {
    let summary = write_summary(output)?;
    let found = discover(output)?;
    let n = summary::class_count(&found.runs);
    let data = FigureData::from_groups(&groups(&found.runs), n)?;
    let figures = data.render(&output.join(FIGURES_DIR))?;
    Ok(Report { summary, figures })
}
