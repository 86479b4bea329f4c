use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::MAX_LABELED_FRACTION;
use crate::error::{Error, Result};
use crate::losses::KlPairing;
use crate::trainer::{Method, TrainerConfig};

/// Labeled fractions a sweep may use. Fully supervised baselines may also
/// run at [`FULL_FRACTION`].
pub const PROTOCOL_FRACTIONS: [f64; 5] = [0.05, 0.1, 0.2, 0.3, 0.5];
pub const FULL_FRACTION: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DatasetSource {
    /// Procedurally generated samples.
    Synthetic { count: usize, seed: u64 },
    /// A directory in the layout read by [`crate::data::load_dataset`].
    Directory(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub side: usize,
    pub class_count: usize,
    pub validation: f64,
    pub test: f64,
    pub methods: Vec<Method>,
    pub fractions: Vec<f64>,
    /// Per-method replacement for `fractions`.
    pub method_fractions: BTreeMap<Method, Vec<f64>>,
    pub seeds: Vec<u64>,
    /// Template for every run; method, seed and input side are filled in
    /// per run.
    pub trainer: TrainerConfig,
    pub output: PathBuf,
    pub jobs: usize,
}

/// One cell of the sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub method: Method,
    pub fraction: f64,
    pub seed: u64,
}

impl RunSpec {
    /// Directory name, unique per (method, fraction, seed).
    pub fn id(&self) -> String {
        format!("{}-f{:.2}-s{}", self.method, self.fraction, self.seed)
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(None, format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        Self::parse(&text, base)
    }

    /// Parses the flat `key = value` format. Relative paths resolve against
    /// `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let entries = read_entries(text)?;
        let mut p = Parser {
            entries,
            used: Default::default(),
        };
        let cfg = p.build(base)?;
        if let Some((key, (line, _))) = p.entries.iter().find(|(k, _)| !p.used.contains(*k)) {
            return Err(Error::config(Some(*line), format!("unknown key `{key}`")));
        }
        Ok(cfg)
    }

    pub fn fractions_for(&self, method: Method) -> &[f64] {
        self.method_fractions.get(&method).unwrap_or(&self.fractions)
    }

    /// Every run of the sweep, methods in configured order, then fractions,
    /// then seeds.
    pub fn runs(&self) -> Vec<RunSpec> {
        let mut out = Vec::new();
        for &method in &self.methods {
            for &fraction in self.fractions_for(method) {
                for &seed in &self.seeds {
                    out.push(RunSpec { method, fraction, seed });
                }
            }
        }
        out
    }

    /// Trainer settings of one run.
    pub fn trainer_for(&self, run: &RunSpec) -> TrainerConfig {
        let mut cfg = self.trainer.clone();
        cfg.method = run.method;
        cfg.seed = run.seed;
        cfg.generator.input_side = self.side;
        cfg
    }
}

fn read_entries(text: &str) -> Result<BTreeMap<String, (usize, String)>> {
    let mut entries = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.trim();
        if content.is_empty() || content.starts_with('#') {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| Error::config(Some(line), format!("expected `key = value`, got `{content}`")))?;
        let key = key.trim();
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '.' || c == '_') {
            return Err(Error::config(Some(line), format!("malformed key `{key}`")));
        }
        let key = normalize_key(key);
        if let Some((first, _)) = entries.insert(key.clone(), (line, value.trim().to_string())) {
            return Err(Error::config(
                Some(line),
                format!("duplicate key `{key}` (first set at line {first})"),
            ));
        }
    }
    Ok(entries)
}

/// Method names in `fractions.<METHOD>` are case-insensitive.
fn normalize_key(key: &str) -> String {
    match key.split_once('.') {
        Some(("fractions", m)) => format!("fractions.{}", m.to_ascii_uppercase()),
        _ => key.to_string(),
    }
}

struct Parser {
    entries: BTreeMap<String, (usize, String)>,
    used: std::collections::BTreeSet<String>,
}

impl Parser {
    fn raw(&mut self, key: &str) -> Option<(usize, String)> {
        let e = self.entries.get(key).cloned();
        if e.is_some() {
            self.used.insert(key.to_string());
        }
        e
    }

    fn line(&self, key: &str) -> Option<usize> {
        self.entries.get(key).map(|(l, _)| *l)
    }

    fn required(&mut self, key: &str) -> Result<(usize, String)> {
        self.raw(key)
            .ok_or_else(|| Error::config(None, format!("missing required key `{key}`")))
    }

    fn value<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::config(Some(line), format!("`{key}`: cannot parse `{v}`"))),
        }
    }

    fn set<T: std::str::FromStr>(&mut self, key: &str, slot: &mut T) -> Result<()> {
        if let Some(v) = self.value(key)? {
            *slot = v;
        }
        Ok(())
    }

    fn list<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<(usize, Vec<T>)>> {
        let Some((line, v)) = self.raw(key) else {
            return Ok(None);
        };
        let items = v
            .split(',')
            .map(str::trim)
            .map(|s| {
                s.parse()
                    .map_err(|_| Error::config(Some(line), format!("`{key}`: cannot parse item `{s}`")))
            })
            .collect::<Result<Vec<T>>>()?;
        if items.is_empty() {
            return Err(Error::config(Some(line), format!("`{key}` is empty")));
        }
        Ok(Some((line, items)))
    }

    fn build(&mut self, base: &Path) -> Result<ExperimentConfig> {
        let dataset = match (self.raw("dataset.dir"), self.line("dataset.synthetic.count")) {
            (Some(_), Some(line)) => {
                return Err(Error::config(
                    Some(line),
                    "set either `dataset.dir` or `dataset.synthetic.count`, not both",
                ))
            }
            (Some((_, dir)), None) => DatasetSource::Directory(base.join(dir)),
            (None, Some(line)) => {
                let count: usize = self.value("dataset.synthetic.count")?.unwrap_or(0);
                if count == 0 {
                    return Err(Error::config(Some(line), "`dataset.synthetic.count` must be positive"));
                }
                DatasetSource::Synthetic {
                    count,
                    seed: self.value("dataset.synthetic.seed")?.unwrap_or(0),
                }
            }
            (None, None) => {
                return Err(Error::config(
                    None,
                    "missing dataset: set `dataset.dir` or `dataset.synthetic.count`",
                ))
            }
        };
        if let Some(line) = self.line("dataset.synthetic.seed") {
            if matches!(dataset, DatasetSource::Directory(_)) {
                return Err(Error::config(Some(line), "`dataset.synthetic.seed` needs a synthetic dataset"));
            }
        }
        let side: usize = self.value("dataset.side")?.unwrap_or(64);
        let class_count: usize = self.value("dataset.classes")?.unwrap_or(2);
        if class_count < 2 {
            return Err(Error::config(self.line("dataset.classes"), "`dataset.classes` must be at least 2"));
        }
        let validation: f64 = self.value("split.validation")?.unwrap_or(0.1);
        let test: f64 = self.value("split.test")?.unwrap_or(0.2);
        if !(0.0..1.0).contains(&validation) || !(0.0..1.0).contains(&test) || validation + test >= 1.0 {
            return Err(Error::config(
                self.line("split.test").or(self.line("split.validation")),
                "`split.validation` and `split.test` must be nonnegative and sum below 1",
            ));
        }

        let (methods_line, methods) = self.required("methods")?;
        let methods = parse_methods(methods_line, &methods)?;

        let (line, fractions) = self
            .list::<f64>("fractions")?
            .ok_or_else(|| Error::config(None, "missing required key `fractions`"))?;
        let fractions = check_fractions(line, "fractions", &fractions)?;
        let overrides: Vec<String> = self
            .entries
            .keys()
            .filter(|k| k.starts_with("fractions."))
            .cloned()
            .collect();
        let mut method_fractions = BTreeMap::new();
        for key in overrides {
            let line = self.line(&key).unwrap_or_default();
            let method: Method = key["fractions.".len()..]
                .parse()
                .map_err(|_| Error::config(Some(line), format!("`{key}`: unknown method")))?;
            if !methods.contains(&method) {
                return Err(Error::config(Some(line), format!("`{key}`: {method} is not in `methods`")));
            }
            let (_, values) = self.list::<f64>(&key)?.unwrap_or_default();
            method_fractions.insert(method, check_fractions(line, &key, &values)?);
        }
        for &m in methods.iter().filter(|m| m.is_semi_supervised()) {
            let (key, list) = match method_fractions.get(&m) {
                Some(l) => (format!("fractions.{m}"), l),
                None => ("fractions".to_string(), &fractions),
            };
            if list.contains(&FULL_FRACTION) {
                return Err(Error::config(
                    self.line(&key),
                    format!("`{key}`: {m} is semi-supervised and cannot use fraction 1.0"),
                ));
            }
        }

        let (line, seeds) = self
            .list::<u64>("seeds")?
            .ok_or_else(|| Error::config(None, "missing required key `seeds`"))?;
        if let Some(d) = first_duplicate(&seeds) {
            return Err(Error::config(Some(line), format!("`seeds`: {d} listed twice")));
        }
        let (_, output) = self.required("output")?;
        let jobs: usize = self.value("jobs")?.unwrap_or(1);
        if jobs == 0 {
            return Err(Error::config(self.line("jobs"), "`jobs` must be at least 1"));
        }

        let trainer = self.trainer(methods[0])?;
        let mut check = trainer.clone();
        check.generator.input_side = side;
        check
            .validate()
            .map_err(|e| Error::config(None, format!("trainer settings: {}", strip_prefix(e))))?;
        check
            .discriminator(class_count)
            .validate()
            .map_err(|e| Error::config(None, format!("discriminator settings: {}", strip_prefix(e))))?;

        Ok(ExperimentConfig {
            dataset,
            side,
            class_count,
            validation,
            test,
            methods,
            fractions,
            method_fractions,
            seeds,
            trainer,
            output: base.join(output),
            jobs,
        })
    }

    fn trainer(&mut self, method: Method) -> Result<TrainerConfig> {
        let mut t = TrainerConfig::new(method);
        self.set("train.epochs", &mut t.epochs)?;
        self.set("train.batch_size", &mut t.batch_size)?;
        self.set("train.lr_g", &mut t.lr_g)?;
        self.set("train.beta1_g", &mut t.beta1_g)?;
        self.set("train.lr_d", &mut t.lr_d)?;
        self.set("train.beta1_d", &mut t.beta1_d)?;
        self.set("train.beta2", &mut t.beta2)?;
        self.set("train.adam_eps", &mut t.adam_eps)?;
        self.set("train.decay_every", &mut t.decay_every)?;
        self.set("train.decay_g", &mut t.decay_g)?;
        self.set("train.decay_d", &mut t.decay_d)?;
        self.set("train.alpha", &mut t.weights.alpha)?;
        self.set("train.lambda_adv", &mut t.weights.lambda_adv)?;
        self.set("train.lambda_self", &mut t.weights.lambda_self)?;
        self.set("train.tsa", &mut t.tsa_enabled)?;
        self.set("train.tsa_literal", &mut t.tsa_literal)?;
        if let Some(n) = self.value::<usize>("train.tsa_dataset_size")? {
            t.tsa_dataset_size = Some(n);
        }
        if let Some((line, v)) = self.raw("train.kl_pairing") {
            t.kl_pairing = match v.to_ascii_lowercase().as_str() {
                "index" => KlPairing::Index,
                "pooled" => KlPairing::Pooled,
                _ => {
                    return Err(Error::config(
                        Some(line),
                        format!("`train.kl_pairing`: expected `index` or `pooled`, got `{v}`"),
                    ))
                }
            };
        }
        self.set("generator.depth", &mut t.generator.depth)?;
        self.set("generator.base_channels", &mut t.generator.base_channels)?;
        self.set("generator.dropout", &mut t.generator.dropout_rate)?;
        self.set("discriminator.depth", &mut t.convnet_depth)?;
        self.set("discriminator.base_channels", &mut t.convnet_base)?;
        Ok(t)
    }
}

fn strip_prefix(e: Error) -> String {
    match e {
        Error::InvalidInput(m) => m,
        other => other.to_string(),
    }
}

fn parse_methods(line: usize, text: &str) -> Result<Vec<Method>> {
    let mut out = Vec::new();
    for name in text.split(',').map(str::trim) {
        let m: Method = name
            .parse()
            .map_err(|_| Error::config(Some(line), format!("`methods`: unknown method `{name}`")))?;
        if out.contains(&m) {
            return Err(Error::config(Some(line), format!("`methods`: {m} listed twice")));
        }
        out.push(m);
    }
    Ok(out)
}

/// Snaps each value onto the protocol set, rejecting anything else.
fn check_fractions(line: usize, key: &str, values: &[f64]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(values.len());
    for &v in values {
        let snapped = PROTOCOL_FRACTIONS
            .iter()
            .chain([&FULL_FRACTION])
            .find(|&&f| (f - v).abs() < 1e-9)
            .copied();
        let f = match snapped {
            Some(f) => f,
            None if v > MAX_LABELED_FRACTION && v != FULL_FRACTION => {
                return Err(Error::config(
                    Some(line),
                    format!("`{key}`: fraction {v} exceeds the 50% labeled cap"),
                ))
            }
            None => {
                return Err(Error::config(
                    Some(line),
                    format!("`{key}`: fraction {v} is not one of 0.05, 0.1, 0.2, 0.3, 0.5, 1.0"),
                ))
            }
        };
        if out.contains(&f) {
            return Err(Error::config(Some(line), format!("`{key}`: fraction {f} listed twice")));
        }
        out.push(f);
    }
    Ok(out)
}

fn first_duplicate(values: &[u64]) -> Option<u64> {
    values
        .iter()
        .enumerate()
        .find(|(i, v)| values[..*i].contains(v))
        .map(|(_, v)| *v)
}
