use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::config::{DatasetSource, ExperimentConfig, RunSpec, FULL_FRACTION};
use super::summary;
use crate::data::{fully_labeled_split, load_dataset, make_synthetic, stratified_split, write_manifest, DatasetSplit};
use crate::data::{Sample, SplitFractions};
use crate::error::{Error, Result};
use crate::trainer::{evaluate, save_checkpoint, train_baseline, Checkpoint, TrainerConfig};

pub const RUNS_DIR: &str = "runs";
pub const MANIFEST_FILE: &str = "run.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const VAL_FILE: &str = "val_metrics.csv";
pub const TEST_FILE: &str = "test_metrics.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const SPLIT_FILE: &str = "split.csv";
pub const CHECKPOINT_FILE: &str = "model.ckpt";

/// Files every finished run directory holds. The manifest is written last
/// and marks completion.
pub const RUN_ARTIFACTS: [&str; 7] = [
    HISTORY_FILE,
    VAL_FILE,
    TEST_FILE,
    TIMING_FILE,
    SPLIT_FILE,
    CHECKPOINT_FILE,
    MANIFEST_FILE,
];

/// Everything that determines a run's results. Two runs with equal manifests
/// produce identical artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run: RunSpec,
    pub class_count: usize,
    pub dataset: DatasetSource,
    pub side: usize,
    pub validation: f64,
    pub test: f64,
    pub trainer: TrainerConfig,
}

impl RunManifest {
    pub fn new(cfg: &ExperimentConfig, run: RunSpec) -> Self {
        RunManifest {
            run,
            class_count: cfg.class_count,
            dataset: cfg.dataset.clone(),
            side: cfg.side,
            validation: cfg.validation,
            test: cfg.test,
            trainer: cfg.trainer_for(&run),
        }
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join(MANIFEST_FILE))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunOutcome {
    Trained { wall_seconds: f64 },
    /// A finished directory with an identical manifest already existed.
    Reused,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run: RunSpec,
    pub dir: PathBuf,
    pub outcome: RunOutcome,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Replace existing run directories instead of reusing or refusing them.
    pub force: bool,
    /// Overrides the configured worker count.
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct ExperimentSummary {
    pub records: Vec<RunRecord>,
    pub output: PathBuf,
}

impl ExperimentSummary {
    pub fn failures(&self) -> impl Iterator<Item = &RunRecord> {
        self.records.iter().filter(|r| matches!(r.outcome, RunOutcome::Failed(_)))
    }
}

pub fn load_samples(cfg: &ExperimentConfig) -> Result<Vec<Sample>> {
    match &cfg.dataset {
        DatasetSource::Synthetic { count, seed } => make_synthetic(*count, cfg.side, cfg.class_count, *seed),
        DatasetSource::Directory(dir) => load_dataset(dir, cfg.class_count, cfg.side),
    }
}

pub fn split_for(cfg: &ExperimentConfig, samples: &[Sample], run: &RunSpec) -> Result<DatasetSplit> {
    if run.fraction >= FULL_FRACTION {
        fully_labeled_split(samples, cfg.class_count, cfg.validation, cfg.test, run.seed)
    } else {
        let fractions = SplitFractions {
            labeled: run.fraction,
            validation: cfg.validation,
            test: cfg.test,
        };
        stratified_split(samples, cfg.class_count, fractions, run.seed)
    }
}

pub fn run_dir(output: &Path, run: &RunSpec) -> PathBuf {
    output.join(RUNS_DIR).join(run.id())
}

/// Trains and evaluates every run of the sweep, then writes the results
/// table and statistics into the output directory. Individual run failures
/// are recorded and do not stop the sweep; `progress` is called as each run
/// finishes.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    opts: &RunOptions,
    progress: &(dyn Fn(&RunRecord) + Sync),
) -> Result<ExperimentSummary> {
    let samples = load_samples(cfg)?;
    std::fs::create_dir_all(cfg.output.join(RUNS_DIR))?;
    let runs = cfg.runs();
    let jobs = opts.jobs.unwrap_or(cfg.jobs).clamp(1, runs.len().max(1));
    let next = AtomicUsize::new(0);
    let done: Mutex<Vec<Option<RunRecord>>> = Mutex::new(vec![None; runs.len()]);
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(run) = runs.get(i) else { break };
                let dir = run_dir(&cfg.output, run);
                let outcome = match execute(cfg, &samples, run, &dir, opts.force) {
                    Ok(o) => o,
                    Err(e) => RunOutcome::Failed(e.to_string()),
                };
                let record = RunRecord {
                    run: *run,
                    dir,
                    outcome,
                };
                progress(&record);
                done.lock().expect("worker panicked")[i] = Some(record);
            });
        }
    });
    let records: Vec<RunRecord> = done
        .into_inner()
        .expect("worker panicked")
        .into_iter()
        .map(|r| r.expect("every run visited"))
        .collect();
    summary::write_summary(&cfg.output)?;
    Ok(ExperimentSummary {
        records,
        output: cfg.output.clone(),
    })
}

fn is_complete(dir: &Path) -> bool {
    RUN_ARTIFACTS.iter().all(|f| dir.join(f).is_file())
}

fn execute(cfg: &ExperimentConfig, samples: &[Sample], run: &RunSpec, dir: &Path, force: bool) -> Result<RunOutcome> {
    let manifest = RunManifest::new(cfg, *run);
    if dir.exists() {
        if force {
            std::fs::remove_dir_all(dir)?;
        } else if is_complete(dir) && RunManifest::read(dir).ok().as_ref() == Some(&manifest) {
            return Ok(RunOutcome::Reused);
        } else {
            return Err(Error::invalid(format!(
                "{} exists with different settings or is incomplete; pass --force to replace it",
                dir.display()
            )));
        }
    }
    let partial = dir.with_file_name(format!(".{}.partial", run.id()));
    if partial.exists() {
        std::fs::remove_dir_all(&partial)?;
    }
    std::fs::create_dir_all(&partial)?;
    let wall_seconds = train_into(cfg, samples, &manifest, &partial)?;
    std::fs::rename(&partial, dir)?;
    Ok(RunOutcome::Trained { wall_seconds })
}

fn train_into(cfg: &ExperimentConfig, samples: &[Sample], manifest: &RunManifest, dir: &Path) -> Result<f64> {
    let run = &manifest.run;
    let split = split_for(cfg, samples, run)?;
    std::fs::write(dir.join(SPLIT_FILE), write_manifest(&split))?;
    let trainer = &manifest.trainer;
    let (models, history) = train_baseline(&split, trainer)?;
    let test = evaluate(&models, run.method, &split.test, cfg.class_count)?;
    history.write_steps_csv(&dir.join(HISTORY_FILE))?;
    history.write_epochs_csv(&dir.join(VAL_FILE))?;
    history.write_timing_csv(&dir.join(TIMING_FILE))?;
    test.write_csv(&dir.join(TEST_FILE))?;
    let wall_seconds = history.wall_seconds();
    save_checkpoint(
        &dir.join(CHECKPOINT_FILE),
        &Checkpoint {
            class_count: cfg.class_count,
            config: trainer.clone(),
            models,
            history,
        },
    )?;
    std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(manifest)?)?;
    Ok(wall_seconds)
}
