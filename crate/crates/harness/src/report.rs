//! CSV, JSON and SVG output of a sweep.

use std::fs;
use std::path::{Path, PathBuf};

use plotters::prelude::*;
use thiserror::Error;

use crate::config::ExperimentSpec;
use crate::runner::{summarize, ExperimentOutput, MetricRecord, SummaryRow};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Toml(#[from] toml::ser::Error),
    #[error("plot: {0}")]
    Plot(String),
    #[error("{0} contains no records")]
    Empty(PathBuf),
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io { path: path.to_path_buf(), source }
}

pub fn write_records(path: &Path, records: &[MetricRecord]) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(io(path))?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<MetricRecord>, ReportError> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().collect::<Result<Vec<_>, _>>().map_err(Into::into)
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(io(path))?;
    Ok(())
}

#[derive(Clone, Copy)]
enum Metric {
    Nmse,
    Se,
}

fn plot(path: &Path, rows: &[SummaryRow], metric: Metric) -> Result<(), ReportError> {
    let err = |e: &dyn std::fmt::Display| ReportError::Plot(e.to_string());
    let value = |r: &SummaryRow| match metric {
        Metric::Nmse => r.nmse_mean,
        Metric::Se => r.se_mean,
    };
    let pts: Vec<(f64, f64)> =
        rows.iter().map(|r| (r.axis_value, value(r))).filter(|p| p.1.is_finite()).collect();
    if pts.is_empty() {
        return Ok(());
    }
    let (mut x0, mut x1) = pts.iter().fold((f64::MAX, f64::MIN), |a, p| (a.0.min(p.0), a.1.max(p.0)));
    if x0 == x1 {
        x0 -= 1.0;
        x1 += 1.0;
    }
    let axis = rows[0].axis.clone();
    let mut labels: Vec<&str> = Vec::new();
    for r in rows {
        if !labels.contains(&r.estimator.as_str()) {
            labels.push(&r.estimator);
        }
    }
    let root = SVGBackend::new(path, (720, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| err(&e))?;

    macro_rules! draw {
        ($chart:expr, $ylabel:expr) => {{
            let mut chart = $chart;
            chart.configure_mesh().x_desc(axis.as_str()).y_desc($ylabel).draw().map_err(|e| err(&e))?;
            for (i, label) in labels.iter().enumerate() {
                let color = Palette99::pick(i).to_rgba();
                let series: Vec<(f64, f64)> = rows
                    .iter()
                    .filter(|r| r.estimator == *label)
                    .map(|r| (r.axis_value, value(r)))
                    .filter(|p| p.1.is_finite() && (matches!(metric, Metric::Se) || p.1 > 0.0))
                    .collect();
                chart
                    .draw_series(LineSeries::new(series.clone(), color.stroke_width(2)))
                    .map_err(|e| err(&e))?
                    .label(label.to_string())
                    .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2)));
                chart
                    .draw_series(series.iter().map(|&p| Circle::new(p, 3, color.filled())))
                    .map_err(|e| err(&e))?;
            }
            chart
                .configure_series_labels()
                .background_style(WHITE.mix(0.8))
                .border_style(BLACK)
                .draw()
                .map_err(|e| err(&e))?;
        }};
    }

    let mut builder = ChartBuilder::on(&root);
    builder.margin(16).x_label_area_size(40).y_label_area_size(64);
    match metric {
        Metric::Nmse => {
            let pos: Vec<f64> = pts.iter().map(|p| p.1).filter(|&v| v > 0.0).collect();
            let lo = pos.iter().copied().fold(f64::MAX, f64::min).min(1.0) / 2.0;
            let hi = pos.iter().copied().fold(f64::MIN, f64::max).max(lo * 4.0) * 2.0;
            let chart = builder.build_cartesian_2d(x0..x1, (lo..hi).log_scale()).map_err(|e| err(&e))?;
            draw!(chart, "NMSE");
        }
        Metric::Se => {
            let hi = pts.iter().map(|p| p.1).fold(0.0, f64::max).max(1e-3) * 1.1;
            let chart = builder.build_cartesian_2d(x0..x1, 0.0..hi).map_err(|e| err(&e))?;
            draw!(chart, "SE (bit/s/Hz/stream)");
        }
    }
    root.present().map_err(|e| err(&e))?;
    Ok(())
}

/// nmse.svg and se.svg next to the tables.
pub fn write_plots(dir: &Path, rows: &[SummaryRow]) -> Result<(), ReportError> {
    plot(&dir.join("nmse.svg"), rows, Metric::Nmse)?;
    plot(&dir.join("se.svg"), rows, Metric::Se)
}

/// Writes records.csv, summary.csv, thresholds.json, experiment.toml and,
/// when enabled, the plots. Returns the summary.
pub fn write_all(dir: &Path, spec: &ExperimentSpec, out: &ExperimentOutput) -> Result<Vec<SummaryRow>, ReportError> {
    fs::create_dir_all(dir).map_err(io(dir))?;
    write_records(&dir.join("records.csv"), &out.records)?;
    let rows = summarize(&out.records);
    write_summary(&dir.join("summary.csv"), &rows)?;
    let th = dir.join("thresholds.json");
    fs::write(&th, serde_json::to_string_pretty(&out.thresholds)?).map_err(io(&th))?;
    let copy = dir.join("experiment.toml");
    fs::write(&copy, toml::to_string(spec)?).map_err(io(&copy))?;
    if spec.output.plots {
        write_plots(dir, &rows)?;
    }
    Ok(rows)
}

/// Re-derives summary.csv and plots from an existing records.csv.
pub fn report(records_csv: &Path, dir: &Path) -> Result<Vec<SummaryRow>, ReportError> {
    let records = read_records(records_csv)?;
    if records.is_empty() {
        return Err(ReportError::Empty(records_csv.to_path_buf()));
    }
    fs::create_dir_all(dir).map_err(io(dir))?;
    let rows = summarize(&records);
    write_summary(&dir.join("summary.csv"), &rows)?;
    write_plots(dir, &rows)?;
    Ok(rows)
}
