use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use super::runner::{RunManifest, MANIFEST_FILE, RUNS_DIR, TEST_FILE};
use crate::error::Result;
use crate::metrics::{bland_altman, one_way_anova, paired_tests, pearson, AgreementPoint, MetricsTable, StatReport};
use crate::trainer::Method;

pub const RESULTS_CSV: &str = "results.csv";
pub const RESULTS_TXT: &str = "results.txt";
pub const STATS_CSV: &str = "stats.csv";

/// Fraction the paired tests compare from, when the sweep has it.
pub const REFERENCE_FRACTION: f64 = 0.5;
/// Fewest paired samples for which tests are run.
pub const MIN_PAIRS: usize = 5;

/// A finished run read back from disk.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub manifest: RunManifest,
    pub dir: PathBuf,
    pub table: MetricsTable,
}

impl RunResult {
    pub fn method(&self) -> Method {
        self.manifest.run.method
    }

    pub fn fraction(&self) -> f64 {
        self.manifest.run.fraction
    }

    pub fn seed(&self) -> u64 {
        self.manifest.run.seed
    }
}

#[derive(Debug, Clone, Default)]
pub struct Discovery {
    /// Ordered by run directory name.
    pub runs: Vec<RunResult>,
    /// Run directories that could not be read, with the reason.
    pub missing: Vec<(PathBuf, String)>,
}

/// Reads every run directory under `output`. Unfinished and unreadable
/// directories are listed in `missing` rather than failing the scan.
pub fn discover(output: &Path) -> Result<Discovery> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(output.join(RUNS_DIR))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    let mut found = Discovery::default();
    for dir in dirs {
        let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if name.starts_with('.') {
            found.missing.push((dir.clone(), "unfinished run".into()));
            continue;
        }
        let manifest = match RunManifest::read(&dir) {
            Ok(m) => m,
            Err(e) => {
                found.missing.push((dir.clone(), format!("{MANIFEST_FILE}: {e}")));
                continue;
            }
        };
        match MetricsTable::read_csv(&dir.join(TEST_FILE)) {
            Ok(table) => found.runs.push(RunResult { manifest, dir, table }),
            Err(e) => found.missing.push((dir.clone(), format!("{TEST_FILE}: {e}"))),
        }
    }
    Ok(found)
}

/// Table position: single-task methods first, then multitask ones.
pub fn method_rank(m: Method) -> (bool, usize) {
    let order = [Method::Unet, Method::Convnet, Method::Umtl, Method::S2mtl, Method::S4mtl];
    (m.is_multitask(), order.iter().position(|&x| x == m).unwrap_or(order.len()))
}

pub fn fraction_label(f: f64) -> String {
    format!("{}%", (f * 100.0).round())
}

/// Runs sharing method and labeled fraction, ordered by seed.
#[derive(Debug, Clone)]
pub struct Group<'a> {
    pub method: Method,
    pub fraction: f64,
    pub runs: Vec<&'a RunResult>,
}

impl Group<'_> {
    pub fn label(&self) -> String {
        format!("{}@{}", self.method, fraction_label(self.fraction))
    }

    /// Per-sample Dice keyed by `seed/id`, the pairing key of the tests.
    pub fn dice_by_sample(&self) -> BTreeMap<String, f64> {
        self.per_sample(|r| r.ds)
    }

    /// Per-sample Dice of every run pooled, in seed then sample order.
    pub fn dice_values(&self) -> Vec<f64> {
        self.runs
            .iter()
            .flat_map(|r| r.table.rows.iter().filter_map(|x| x.ds))
            .collect()
    }

    fn per_sample(&self, f: impl Fn(&crate::metrics::MetricsRow) -> Option<f64>) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        for run in &self.runs {
            for row in &run.table.rows {
                if let Some(v) = f(row) {
                    out.insert(format!("{}/{}", run.seed(), row.id), v);
                }
            }
        }
        out
    }
}

/// Groups in table order: single-task block, multitask block, fractions
/// descending within a method.
pub fn groups(runs: &[RunResult]) -> Vec<Group<'_>> {
    let mut out: Vec<Group<'_>> = Vec::new();
    for run in runs {
        match out
            .iter_mut()
            .find(|g| g.method == run.method() && g.fraction == run.fraction())
        {
            Some(g) => g.runs.push(run),
            None => out.push(Group {
                method: run.method(),
                fraction: run.fraction(),
                runs: vec![run],
            }),
        }
    }
    for g in &mut out {
        g.runs.sort_by_key(|r| r.seed());
    }
    out.sort_by(|a, b| {
        method_rank(a.method)
            .cmp(&method_rank(b.method))
            .then(b.fraction.total_cmp(&a.fraction))
    });
    out
}

/// One row of the results table: metric means over seeds, where each seed
/// contributes the mean over its test samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub method: Method,
    pub fraction: f64,
    pub seeds: Vec<u64>,
    pub ds: Option<f64>,
    pub ji: Option<f64>,
    pub ssim: Option<f64>,
    pub hd: Option<f64>,
    pub prec: Option<f64>,
    pub rec: Option<f64>,
    pub accuracy: Option<f64>,
    pub f1: Vec<Option<f64>>,
}

fn mean_over(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn result_rows(groups: &[Group<'_>], class_count: usize) -> Vec<ResultRow> {
    groups
        .iter()
        .map(|g| {
            let agg: Vec<_> = g.runs.iter().map(|r| r.table.aggregate()).collect();
            let cls: Vec<_> = g.runs.iter().map(|r| r.table.classification(class_count)).collect();
            ResultRow {
                method: g.method,
                fraction: g.fraction,
                seeds: g.runs.iter().map(|r| r.seed()).collect(),
                ds: mean_over(agg.iter().map(|a| a.ds)),
                ji: mean_over(agg.iter().map(|a| a.ji)),
                ssim: mean_over(agg.iter().map(|a| a.ssim)),
                hd: mean_over(agg.iter().map(|a| a.hd)),
                prec: mean_over(agg.iter().map(|a| a.prec)),
                rec: mean_over(agg.iter().map(|a| a.rec)),
                accuracy: mean_over(cls.iter().map(|c| c.as_ref().map(|c| c.accuracy))),
                f1: (0..class_count)
                    .map(|k| mean_over(cls.iter().map(|c| c.as_ref().map(|c| c.f1[k]))))
                    .collect(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatRow {
    pub comparison: String,
    /// Number of values (pairs for paired tests) the test saw.
    pub n: usize,
    pub report: StatReport,
}

/// The S4MTL group the tests compare from: the reference fraction if
/// present, otherwise the largest fraction run.
pub fn reference_group<'g, 'a>(groups: &'g [Group<'a>]) -> Option<&'g Group<'a>> {
    let s4: Vec<&Group<'a>> = groups.iter().filter(|g| g.method == Method::S4mtl).collect();
    s4.iter()
        .find(|g| g.fraction == REFERENCE_FRACTION)
        .or_else(|| s4.iter().max_by(|a, b| a.fraction.total_cmp(&b.fraction)))
        .copied()
}

/// Paired-t and Wilcoxon tests of the reference group's per-sample Dice
/// against every other segmenting method's groups, a one-way ANOVA over all
/// of them, and Bland-Altman and Pearson agreement of the reference group's
/// foreground pixel counts.
pub fn statistics(groups: &[Group<'_>]) -> Result<Vec<StatRow>> {
    let mut out = Vec::new();
    let Some(reference) = reference_group(groups) else {
        return Ok(out);
    };
    let ref_dice = reference.dice_by_sample();
    let mut anova_labels = vec![reference.label()];
    let mut anova_groups = vec![ref_dice.values().copied().collect::<Vec<f64>>()];
    for g in groups.iter().filter(|g| g.method != Method::S4mtl && g.method.segments()) {
        let other = g.dice_by_sample();
        let (a, b): (Vec<f64>, Vec<f64>) = ref_dice
            .iter()
            .filter_map(|(k, v)| Some((*v, *other.get(k)?)))
            .unzip();
        if a.len() < MIN_PAIRS {
            continue;
        }
        let comparison = format!("{} vs {}", reference.label(), g.label());
        let (t, w) = paired_tests(&a, &b)?;
        for report in [t, w] {
            out.push(StatRow {
                comparison: comparison.clone(),
                n: a.len(),
                report,
            });
        }
        anova_labels.push(g.label());
        anova_groups.push(other.values().copied().collect());
    }
    if anova_groups.len() >= 2 && anova_groups.iter().all(|g| g.len() >= 2) {
        let refs: Vec<&[f64]> = anova_groups.iter().map(Vec::as_slice).collect();
        out.push(StatRow {
            comparison: anova_labels.join(" / "),
            n: anova_groups.iter().map(Vec::len).sum(),
            report: one_way_anova(&refs)?,
        });
    }
    if let Some((report, points)) = agreement(reference)? {
        out.push(StatRow {
            comparison: format!("{} pixel counts", reference.label()),
            n: points.len(),
            report,
        });
        let (truth, pred) = pixel_counts(reference);
        if truth.len() >= 3 {
            out.push(StatRow {
                comparison: format!("{} pixel counts", reference.label()),
                n: truth.len(),
                report: pearson(&truth, &pred)?,
            });
        }
    }
    Ok(out)
}

fn pixel_counts(g: &Group<'_>) -> (Vec<f64>, Vec<f64>) {
    g.runs
        .iter()
        .flat_map(|r| r.table.rows.iter())
        .filter_map(|r| Some((r.truth_pixels?, r.pred_pixels?)))
        .unzip()
}

/// Bland-Altman analysis of predicted against true foreground pixel counts.
pub fn agreement(g: &Group<'_>) -> Result<Option<(StatReport, Vec<AgreementPoint>)>> {
    let (truth, pred) = pixel_counts(g);
    if truth.len() < 2 {
        return Ok(None);
    }
    bland_altman(&truth, &pred).map(Some)
}

fn cell(v: Option<f64>) -> String {
    v.map(number).unwrap_or_default()
}

/// Shortest round-trip text, in exponent form for tiny magnitudes.
fn number(x: f64) -> String {
    if x != 0.0 && x.abs() < 1e-4 {
        format!("{x:e}")
    } else {
        x.to_string()
    }
}

fn cell3(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into())
}

pub fn class_count(runs: &[RunResult]) -> usize {
    runs.iter().map(|r| r.manifest.class_count).max().unwrap_or(0)
}

pub fn write_results_csv(path: &Path, rows: &[ResultRow], class_count: usize) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut header = vec![
        "method", "block", "labeled_fraction", "seeds", "ds", "ji", "ssim", "hd", "prec", "rec", "accuracy",
    ]
    .into_iter()
    .map(String::from)
    .collect::<Vec<_>>();
    header.extend((0..class_count).map(|k| format!("f1_{k}")));
    writeln!(out, "{}", header.join(","))?;
    for r in rows {
        let seeds: Vec<String> = r.seeds.iter().map(u64::to_string).collect();
        let mut fields = vec![
            r.method.to_string(),
            if r.method.is_multitask() { "multitask" } else { "single-task" }.to_string(),
            r.fraction.to_string(),
            seeds.join(" "),
            cell(r.ds),
            cell(r.ji),
            cell(r.ssim),
            cell(r.hd),
            cell(r.prec),
            cell(r.rec),
            cell(r.accuracy),
        ];
        fields.extend(r.f1.iter().map(|v| cell(*v)));
        writeln!(out, "{}", fields.join(","))?;
    }
    out.flush()?;
    Ok(())
}

/// Aligned plain-text rendering of the results table.
pub fn render_results_text(rows: &[ResultRow], class_count: usize) -> String {
    let mut header = vec!["Method", "Labeled", "Seeds", "DS", "JI", "SSIM", "HD", "Prec", "Rec", "Acc"]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
    header.extend((0..class_count).map(|k| format!("F1[{k}]")));
    let mut lines: Vec<Option<Vec<String>>> = vec![Some(header)];
    let mut block = None;
    for r in rows {
        let b = r.method.is_multitask();
        if block != Some(b) {
            lines.push(None);
            block = Some(b);
        }
        let mut fields = vec![
            r.method.to_string(),
            fraction_label(r.fraction),
            r.seeds.len().to_string(),
            cell3(r.ds),
            cell3(r.ji),
            cell3(r.ssim),
            cell3(r.hd),
            cell3(r.prec),
            cell3(r.rec),
            cell3(r.accuracy),
        ];
        fields.extend(r.f1.iter().map(|v| cell3(*v)));
        lines.push(Some(fields));
    }
    let cols = lines.iter().flatten().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| lines.iter().flatten().map(|l| l.get(c).map_or(0, String::len)).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    let mut blocks = rows.iter().map(|r| r.method.is_multitask()).collect::<Vec<_>>();
    blocks.dedup();
    let mut names = blocks.into_iter().map(|m| if m { "Multitask" } else { "Single-task" });
    for line in &lines {
        match line {
            None => {
                let _ = writeln!(out, "{}", names.next().unwrap_or_default());
            }
            Some(fields) => {
                let padded: Vec<String> = fields
                    .iter()
                    .zip(&widths)
                    .enumerate()
                    .map(|(i, (f, w))| if i == 0 { format!("{f:<w$}") } else { format!("{f:>w$}") })
                    .collect();
                let _ = writeln!(out, "{}", padded.join("  ").trim_end());
            }
        }
    }
    out
}

pub fn write_stats_csv(path: &Path, stats: &[StatRow]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        out,
        "comparison,test,n,statistic,p_value,degenerate,mean_diff,loa_lower,loa_upper,r"
    )?;
    for s in stats {
        let r = &s.report;
        writeln!(
            out,
            "\"{}\",{},{},{},{},{},{},{},{},{}",
            s.comparison,
            r.test,
            s.n,
            number(r.statistic),
            number(r.p_value),
            u8::from(r.degenerate),
            cell(r.mean_diff),
            cell(r.loa_lower),
            cell(r.loa_upper),
            cell(r.r),
        )?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Summary {
    pub rows: Vec<ResultRow>,
    pub stats: Vec<StatRow>,
    pub missing: Vec<(PathBuf, String)>,
}

/// Reads every finished run under `output` and writes the results table
/// (CSV and text) and the statistics file next to the runs.
pub fn write_summary(output: &Path) -> Result<Summary> {
    let found = discover(output)?;
    let n = class_count(&found.runs);
    let groups = groups(&found.runs);
    let rows = result_rows(&groups, n);
    let stats = statistics(&groups)?;
    write_results_csv(&output.join(RESULTS_CSV), &rows, n)?;
    std::fs::write(output.join(RESULTS_TXT), render_results_text(&rows, n))?;
    write_stats_csv(&output.join(STATS_CSV), &stats)?;
    Ok(Summary {
        rows,
        stats,
        missing: found.missing,
    })
}
