use std::path::{Path, PathBuf};
use std::sync::Once;

use plotters::coord::Shift;
use plotters::prelude::*;
use plotters::style::{register_font, FontStyle};
use statrs::statistics::{Data, OrderStatistics};

use super::summary::{agreement, fraction_label, reference_group, Group};
use crate::error::{Error, Result};
use crate::metrics::{AgreementPoint, StatReport};
use crate::trainer::Method;

const WIDTH: u32 = 900;
const HEIGHT: u32 = 560;
const FONT: &str = "sans-serif";
const GRID: RGBColor = RGBColor(242, 242, 242);
static FONT_BYTES: &[u8] = include_bytes!("../../assets/DejaVuSans.ttf");

/// Values summarized by one box.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxData {
    pub label: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineData {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgreementData {
    pub label: String,
    pub report: StatReport,
    pub points: Vec<AgreementPoint>,
}

/// Everything the report draws, extracted from the run tables.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FigureData {
    /// Per segmenting method: one box of per-sample Dice per fraction,
    /// fractions ascending.
    pub dice_boxes: Vec<(Method, Vec<BoxData>)>,
    /// Per classifying method: mean test accuracy over seeds against
    /// labeled fraction.
    pub accuracy: Vec<LineData>,
    pub agreement: Option<AgreementData>,
    /// Per class: one box of per-sample Dice per compared group.
    pub classwise: Vec<(usize, Vec<BoxData>)>,
}

impl FigureData {
    pub fn from_groups(groups: &[Group<'_>], class_count: usize) -> Result<Self> {
        let mut methods: Vec<Method> = groups.iter().map(|g| g.method).collect();
        methods.dedup();
        let ascending = |m: Method| {
            let mut gs: Vec<&Group<'_>> = groups.iter().filter(|g| g.method == m).collect();
            gs.sort_by(|a, b| a.fraction.total_cmp(&b.fraction));
            gs
        };

        let mut dice_boxes = Vec::new();
        let mut accuracy = Vec::new();
        for &m in &methods {
            let gs = ascending(m);
            if m.segments() {
                let boxes = gs
                    .iter()
                    .map(|g| BoxData {
                        label: fraction_label(g.fraction),
                        values: g.dice_values(),
                    })
                    .collect();
                dice_boxes.push((m, boxes));
            }
            if m.classifies() {
                let points: Vec<(f64, f64)> = gs
                    .iter()
                    .filter_map(|g| {
                        let acc: Vec<f64> = g.runs.iter().filter_map(|r| r.table.accuracy()).collect();
                        (!acc.is_empty()).then(|| (g.fraction, acc.iter().sum::<f64>() / acc.len() as f64))
                    })
                    .collect();
                accuracy.push(LineData {
                    label: m.to_string(),
                    points,
                });
            }
        }

        let reference = reference_group(groups);
        let agreement = match reference {
            Some(g) => agreement(g)?.map(|(report, points)| AgreementData {
                label: g.label(),
                report,
                points,
            }),
            None => None,
        };

        // Each segmenting method at the reference fraction, or at its
        // largest fraction when it was not run there.
        let target = reference.map(|g| g.fraction);
        let compared: Vec<&Group<'_>> = methods
            .iter()
            .filter(|m| m.segments())
            .filter_map(|&m| {
                let gs = ascending(m);
                gs.iter()
                    .find(|g| Some(g.fraction) == target)
                    .or(gs.last())
                    .copied()
            })
            .collect();
        let classwise = (0..class_count)
            .map(|k| {
                let boxes = compared
                    .iter()
                    .map(|g| BoxData {
                        label: g.label(),
                        values: g
                            .runs
                            .iter()
                            .flat_map(|r| r.table.rows.iter())
                            .filter(|r| r.true_class == Some(k))
                            .filter_map(|r| r.ds)
                            .collect(),
                    })
                    .collect();
                (k, boxes)
            })
            .collect();

        Ok(FigureData {
            dice_boxes,
            accuracy,
            agreement,
            classwise,
        })
    }

    /// Renders every figure into `dir` and returns the written paths.
    pub fn render(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        for (method, boxes) in &self.dice_boxes {
            let path = dir.join(format!("dice_boxplot_{}.png", method.name().to_ascii_lowercase()));
            let title = format!("{method}: test Dice by labeled fraction");
            let groups = [(String::new(), boxes.clone())];
            save(&path, |root| box_chart(root, &title, "Labeled fraction", &groups))?;
            written.push(path);
        }
        if !self.accuracy.is_empty() {
            let path = dir.join("accuracy_vs_fraction.png");
            save(&path, |root| line_chart(root, &self.accuracy))?;
            written.push(path);
        }
        if let Some(a) = &self.agreement {
            let path = dir.join("bland_altman.png");
            save(&path, |root| agreement_chart(root, a))?;
            written.push(path);
        }
        if self.classwise.iter().any(|(_, b)| b.iter().any(|x| !x.values.is_empty())) {
            let path = dir.join("classwise_dice.png");
            let groups: Vec<(String, Vec<BoxData>)> = self
                .classwise
                .iter()
                .map(|(k, b)| (format!("class {k}"), b.clone()))
                .collect();
            save(&path, |root| box_chart(root, "Test Dice by class", "Class", &groups))?;
            written.push(path);
        }
        Ok(written)
    }
}

type Area<'a> = DrawingArea<BitMapBackend<'a>, Shift>;

fn plot_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Plot(e.to_string())
}

fn ensure_font() {
    static REGISTER: Once = Once::new();
    REGISTER.call_once(|| {
        // The bundled font is known to parse.
        let _ = register_font(FONT, FontStyle::Normal, FONT_BYTES);
    });
}

fn save(path: &Path, draw: impl FnOnce(&Area<'_>) -> Result<()>) -> Result<()> {
    ensure_font();
    let mut buf = vec![0u8; (WIDTH * HEIGHT * 3) as usize];
    {
        let root = BitMapBackend::with_buffer(&mut buf, (WIDTH, HEIGHT)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        draw(&root)?;
        root.present().map_err(plot_err)?;
    }
    let img = image::RgbImage::from_raw(WIDTH, HEIGHT, buf).ok_or_else(|| Error::Plot("bitmap size".into()))?;
    img.save(path)?;
    Ok(())
}

fn color(i: usize) -> RGBColor {
    const COLORS: [RGBColor; 6] = [
        RGBColor(31, 119, 180),
        RGBColor(255, 127, 14),
        RGBColor(44, 160, 44),
        RGBColor(214, 39, 40),
        RGBColor(148, 103, 189),
        RGBColor(140, 86, 75),
    ];
    COLORS[i % COLORS.len()]
}

/// Quartiles and Tukey whiskers (the most extreme values within 1.5 IQR),
/// plus the values beyond them.
struct BoxStats {
    q1: f64,
    median: f64,
    q3: f64,
    low: f64,
    high: f64,
    outliers: Vec<f64>,
}

fn box_stats(values: &[f64]) -> Option<BoxStats> {
    if values.is_empty() {
        return None;
    }
    let mut data = Data::new(values.to_vec());
    let (q1, median, q3) = (data.lower_quartile(), data.median(), data.upper_quartile());
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside = values.iter().copied().filter(|v| (lo_fence..=hi_fence).contains(v));
    let low = inside.clone().fold(f64::INFINITY, f64::min);
    let high = inside.fold(f64::NEG_INFINITY, f64::max);
    Some(BoxStats {
        q1,
        median,
        q3,
        low,
        high,
        outliers: values
            .iter()
            .copied()
            .filter(|v| !(lo_fence..=hi_fence).contains(v))
            .collect(),
    })
}

/// Clusters of boxes on a Dice axis. Boxes at the same position within
/// their cluster share a color; a legend is drawn when clusters hold more
/// than one box.
fn box_chart(root: &Area<'_>, title: &str, x_desc: &str, clusters: &[(String, Vec<BoxData>)]) -> Result<()> {
    let per = clusters.iter().map(|(_, b)| b.len()).max().unwrap_or(1).max(1);
    let n = clusters.len().max(1);
    let multi = clusters.len() > 1 || clusters.iter().all(|(l, _)| !l.is_empty());
    let labels: Vec<String> = if multi {
        clusters.iter().map(|(l, _)| l.clone()).collect()
    } else {
        clusters.first().map(|(_, b)| b.iter().map(|x| x.label.clone()).collect()).unwrap_or_default()
    };
    let slots = if multi { n } else { per };
    let mut chart = ChartBuilder::on(root)
        .caption(title, (FONT, 22))
        .margin(16)
        .x_label_area_size(44)
        .y_label_area_size(56)
        .build_cartesian_2d(-0.5f64..slots as f64 - 0.5, 0f64..1.02f64)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .light_line_style(GRID)
        .disable_x_mesh()
        .x_labels(slots + 1)
        .x_label_formatter(&|x| {
            let i = x.round();
            if (x - i).abs() < 1e-6 && i >= 0.0 {
                labels.get(i as usize).cloned().unwrap_or_default()
            } else {
                String::new()
            }
        })
        .x_desc(x_desc)
        .y_desc("Dice")
        .label_style((FONT, 14))
        .draw()
        .map_err(plot_err)?;

    let width = if multi { 0.8 / per as f64 } else { 0.5 };
    for (c, (_, boxes)) in clusters.iter().enumerate() {
        for (j, b) in boxes.iter().enumerate() {
            let Some(s) = box_stats(&b.values) else { continue };
            let center = if multi {
                c as f64 - 0.4 + width * (j as f64 + 0.5)
            } else {
                j as f64
            };
            let col = if multi { color(j) } else { color(0) };
            let half = width * 0.4;
            let (l, r) = (center - half, center + half);
            let mut shapes: Vec<PathElement<(f64, f64)>> = vec![
                PathElement::new(vec![(center, s.low), (center, s.q1)], BLACK),
                PathElement::new(vec![(center, s.q3), (center, s.high)], BLACK),
                PathElement::new(vec![(l + half * 0.5, s.low), (r - half * 0.5, s.low)], BLACK),
                PathElement::new(vec![(l + half * 0.5, s.high), (r - half * 0.5, s.high)], BLACK),
            ];
            chart
                .draw_series(std::iter::once(Rectangle::new([(l, s.q1), (r, s.q3)], col.mix(0.35).filled())))
                .map_err(plot_err)?;
            shapes.push(PathElement::new(
                vec![(l, s.q1), (r, s.q1), (r, s.q3), (l, s.q3), (l, s.q1)],
                col.stroke_width(2),
            ));
            shapes.push(PathElement::new(vec![(l, s.median), (r, s.median)], BLACK.stroke_width(2)));
            chart.draw_series(shapes).map_err(plot_err)?;
            chart
                .draw_series(s.outliers.iter().map(|&v| Circle::new((center, v), 3, col)))
                .map_err(plot_err)?;
        }
    }
    if multi && per > 1 {
        if let Some((_, boxes)) = clusters.first() {
            for (j, b) in boxes.iter().enumerate() {
                let col = color(j);
                chart
                    .draw_series(std::iter::empty::<Circle<(f64, f64), i32>>())
                    .map_err(plot_err)?
                    .label(b.label.clone())
                    .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 14, y + 5)], col.mix(0.6).filled()));
            }
            chart
                .configure_series_labels()
                .position(SeriesLabelPosition::LowerRight)
                .label_font((FONT, 14))
                .background_style(WHITE.mix(0.85))
                .border_style(BLACK)
                .draw()
                .map_err(plot_err)?;
        }
    }
    Ok(())
}

fn line_chart(root: &Area<'_>, series: &[LineData]) -> Result<()> {
    let mut chart = ChartBuilder::on(root)
        .caption("Test accuracy by labeled fraction", (FONT, 22))
        .margin(16)
        .x_label_area_size(44)
        .y_label_area_size(56)
        .build_cartesian_2d(0f64..1.05f64, 0f64..1.02f64)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .light_line_style(GRID)
        .x_labels(12)
        .x_label_formatter(&|x| fraction_label(*x))
        .x_desc("Labeled fraction")
        .y_desc("Accuracy")
        .label_style((FONT, 14))
        .draw()
        .map_err(plot_err)?;
    for (i, s) in series.iter().enumerate() {
        let col = color(i);
        chart
            .draw_series(LineSeries::new(s.points.iter().copied(), col.stroke_width(2)))
            .map_err(plot_err)?
            .label(s.label.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], col.stroke_width(2)));
        chart
            .draw_series(s.points.iter().map(|&p| Circle::new(p, 4, col.filled())))
            .map_err(plot_err)?;
    }
    chart
        .configure_series_labels()
        .position(SeriesLabelPosition::LowerRight)
        .label_font((FONT, 14))
        .background_style(WHITE.mix(0.85))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    Ok(())
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    let span = (hi - lo).abs().max(1.0);
    (lo - 0.08 * span, hi + 0.08 * span)
}

fn agreement_chart(root: &Area<'_>, a: &AgreementData) -> Result<()> {
    let bias = a.report.mean_diff.unwrap_or(0.0);
    let lower = a.report.loa_lower.unwrap_or(bias);
    let upper = a.report.loa_upper.unwrap_or(bias);
    let xs = a.points.iter().map(|p| p.mean);
    let (x0, x1) = padded(xs.clone().fold(f64::INFINITY, f64::min), xs.fold(f64::NEG_INFINITY, f64::max));
    let ys = a.points.iter().map(|p| p.diff).chain([lower, upper]);
    let (y0, y1) = padded(ys.clone().fold(f64::INFINITY, f64::min), ys.fold(f64::NEG_INFINITY, f64::max));
    let mut chart = ChartBuilder::on(root)
        .caption(format!("{}: Bland-Altman of foreground pixel counts", a.label), (FONT, 22))
        .margin(16)
        .x_label_area_size(44)
        .y_label_area_size(64)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .light_line_style(GRID)
        .x_desc("Mean of truth and prediction (pixels)")
        .y_desc("Prediction - truth (pixels)")
        .label_style((FONT, 14))
        .draw()
        .map_err(plot_err)?;
    chart
        .draw_series(a.points.iter().map(|p| Circle::new((p.mean, p.diff), 3, color(0).mix(0.7).filled())))
        .map_err(plot_err)?;
    for (value, name, col) in [
        (bias, format!("mean {bias:.1}"), color(3)),
        (upper, format!("+1.96 SD {upper:.1}"), color(1)),
        (lower, format!("-1.96 SD {lower:.1}"), color(1)),
    ] {
        chart
            .draw_series(std::iter::once(PathElement::new(vec![(x0, value), (x1, value)], col.stroke_width(2))))
            .map_err(plot_err)?
            .label(name)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], col.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .position(SeriesLabelPosition::UpperRight)
        .label_font((FONT, 14))
        .background_style(WHITE.mix(0.85))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_stats_use_tukey_whiskers() {
        let mut v: Vec<f64> = (1..=9).map(f64::from).collect();
        v.push(100.0);
        let s = box_stats(&v).unwrap();
        assert!(s.q1 < s.median && s.median < s.q3);
        assert_eq!(s.high, 9.0);
        assert_eq!(s.low, 1.0);
        assert_eq!(s.outliers, vec![100.0]);
        assert!(box_stats(&[]).is_none());
    }
}
