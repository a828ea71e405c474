//! SVG figures from the CSV tables written by the other subcommands.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use plotters::prelude::*;

use crate::UsageError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Style {
    Ablation,
    Shots,
    Threshold,
    Augchoice,
    Embedding,
}

/// A CSV file held as strings, addressed by column name.
pub struct Table {
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
        let headers: Vec<String> = rdr
            .headers()
            .with_context(|| format!("reading {}", path.display()))?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.with_context(|| format!("parsing {}", path.display()))?;
            rows.push(rec.iter().map(|v| v.trim().to_string()).collect());
        }
        if rows.is_empty() {
            return Err(UsageError(format!("{} has no data rows", path.display())).into());
        }
        Ok(Self { headers, rows })
    }

    fn col(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| UsageError(format!("input is missing column `{name}`")).into())
    }

    fn strings(&self, name: &str) -> Result<Vec<String>> {
        let c = self.col(name)?;
        Ok(self.rows.iter().map(|r| r[c].clone()).collect())
    }

    fn numbers(&self, name: &str) -> Result<Vec<f64>> {
        self.strings(name)?
            .iter()
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| UsageError(format!("column `{name}` has non-numeric value `{v}`")).into())
            })
            .collect()
    }
}

fn draw_err<E: std::fmt::Debug>(e: E) -> anyhow::Error {
    anyhow::anyhow!("plotting failed: {e:?}")
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    let span = (hi - lo).abs().max(1e-6);
    (lo - 0.05 * span, hi + 0.05 * span)
}

/// Mean of `values` grouped by `keys`, in first-appearance order.
fn grouped_means(keys: &[String], values: &[f64]) -> Vec<(String, f64)> {
    let mut order = Vec::new();
    let mut acc: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for (k, &v) in keys.iter().zip(values) {
        let e = acc.entry(k).or_insert_with(|| {
            order.push(k.clone());
            (0.0, 0)
        });
        e.0 += v;
        e.1 += 1;
    }
    order
        .into_iter()
        .map(|k| {
            let (s, n) = acc[k.as_str()];
            (k, s / n as f64)
        })
        .collect()
}

fn bars(out: &Path, title: &str, bars: &[(String, f64)], y_desc: &str) -> Result<()> {
    let root = SVGBackend::new(out, (720, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let n = bars.len();
    let top = bars.iter().map(|b| b.1).fold(0.0f64, f64::max).max(1e-6) * 1.1;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(56)
        .build_cartesian_2d(-0.5f64..n as f64 - 0.5, 0.0..top)
        .map_err(draw_err)?;
    let labels: Vec<String> = bars.iter().map(|b| b.0.clone()).collect();
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(n)
        .x_label_formatter(&|x| {
            let i = x.round();
            if (x - i).abs() < 1e-6 && i >= 0.0 && (i as usize) < labels.len() {
                labels[i as usize].clone()
            } else {
                String::new()
            }
        })
        .y_desc(y_desc)
        .draw()
        .map_err(draw_err)?;
    chart
        .draw_series(bars.iter().enumerate().map(|(i, b)| {
            let x = i as f64;
            Rectangle::new([(x - 0.35, 0.0), (x + 0.35, b.1)], Palette99::pick(i).filled())
        }))
        .map_err(draw_err)?;
    root.present().map_err(draw_err)?;
    Ok(())
}

fn ablation(t: &Table, out: &Path) -> Result<()> {
    let pre = t.strings("pretrain")?;
    let cr = t.strings("cr")?;
    let acc = t.numbers("target_accuracy")?;
    let keys: Vec<String> = pre
        .iter()
        .zip(&cr)
        .map(|(p, c)| format!("{p} / cr {}", if c == "true" { "on" } else { "off" }))
        .collect();
    bars(out, "Ablation", &grouped_means(&keys, &acc), "target accuracy")
}

fn augchoice(t: &Table, out: &Path) -> Result<()> {
    let names = t.strings("augmentation")?;
    let acc = t.numbers("mean_accuracy")?;
    bars(out, "Perturbation choice", &grouped_means(&names, &acc), "target accuracy")
}

fn lines(out: &Path, title: &str, x_desc: &str, series: &[(String, Vec<(f64, f64)>)]) -> Result<()> {
    let xs = series.iter().flat_map(|s| s.1.iter().map(|p| p.0));
    let ys = series.iter().flat_map(|s| s.1.iter().map(|p| p.1));
    let (x0, x1) = padded(xs.clone().fold(f64::INFINITY, f64::min), xs.fold(f64::NEG_INFINITY, f64::max));
    let (y0, y1) = padded(ys.clone().fold(f64::INFINITY, f64::min), ys.fold(f64::NEG_INFINITY, f64::max));
    let root = SVGBackend::new(out, (720, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(56)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(draw_err)?;
    chart
        .configure_mesh()
        .x_desc(x_desc)
        .y_desc("target accuracy")
        .draw()
        .map_err(draw_err)?;
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))
            .map_err(draw_err)?
            .label(name.clone())
            .legend(move |(x, y)| PathElement::new([(x, y), (x + 18, y)], color.stroke_width(2)));
        chart
            .draw_series(pts.iter().map(|&p| Circle::new(p, 4, color.filled())))
            .map_err(draw_err)?;
    }
    if series.len() > 1 {
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(draw_err)?;
    }
    root.present().map_err(draw_err)?;
    Ok(())
}

fn shots(t: &Table, out: &Path) -> Result<()> {
    let methods = t.strings("method")?;
    let k = t.numbers("shots")?;
    let acc = t.numbers("mean_accuracy")?;
    let mut series: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for ((m, k), a) in methods.iter().zip(k).zip(acc) {
        match series.iter_mut().find(|s| &s.0 == m) {
            Some(s) => s.1.push((k, a)),
            None => series.push((m.clone(), vec![(k, a)])),
        }
    }
    for s in &mut series {
        s.1.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    lines(out, "Accuracy vs labeled target examples per class", "shots", &series)
}

fn threshold(t: &Table, out: &Path) -> Result<()> {
    let tau = t.numbers("tau")?;
    let acc = t.numbers("mean_accuracy")?;
    let mut pts: Vec<(f64, f64)> = tau.into_iter().zip(acc).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    lines(out, "Sensitivity to confidence threshold", "threshold", &[("pac".into(), pts)])
}

/// Source as light circles, unlabeled target as dark dots, labeled target as crosses.
fn embedding(t: &Table, out: &Path) -> Result<()> {
    let x = t.numbers("x")?;
    let y = t.numbers("y")?;
    let label = t.numbers("label")?;
    let domain = t.strings("domain")?;
    let labeled = t.numbers("is_labeled_target")?;
    let (x0, x1) = padded(x.iter().copied().fold(f64::INFINITY, f64::min), x.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    let (y0, y1) = padded(y.iter().copied().fold(f64::INFINITY, f64::min), y.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    let root = SVGBackend::new(out, (720, 720)).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Feature embedding", ("sans-serif", 22))
        .margin(12)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(draw_err)?;
    let color = |i: usize| Palette99::pick(label[i] as usize);
    let n = x.len();
    chart
        .draw_series(
            (0..n)
                .filter(|&i| domain[i] == "source")
                .map(|i| Circle::new((x[i], y[i]), 4, color(i).mix(0.35).stroke_width(1))),
        )
        .map_err(draw_err)?;
    chart
        .draw_series(
            (0..n)
                .filter(|&i| domain[i] != "source" && labeled[i] == 0.0)
                .map(|i| Circle::new((x[i], y[i]), 3, color(i).filled())),
        )
        .map_err(draw_err)?;
    chart
        .draw_series(
            (0..n)
                .filter(|&i| labeled[i] != 0.0)
                .map(|i| Cross::new((x[i], y[i]), 7, BLACK.stroke_width(3))),
        )
        .map_err(draw_err)?;
    root.present().map_err(draw_err)?;
    Ok(())
}

pub fn plot(style: Style, input: &Path, out: &Path) -> Result<()> {
    let table = Table::read(input)?;
    match style {
        Style::Ablation => ablation(&table, out),
        Style::Shots => shots(&table, out),
        Style::Threshold => threshold(&table, out),
        Style::Augchoice => augchoice(&table, out),
        Style::Embedding => embedding(&table, out),
    }
}
