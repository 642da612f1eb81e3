//! SVG rendering of sweep CSV rows.

use plotters::prelude::*;
use std::collections::BTreeMap;
use std::path::Path;

use super::sweep::SweepRow;
use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    SnrDb,
    BlockLength,
    BandwidthRatio,
}

impl Axis {
    fn value(&self, r: &SweepRow) -> f64 {
        match self {
            Axis::SnrDb => r.snr_db,
            Axis::BlockLength => r.block_length as f64,
            Axis::BandwidthRatio => r.bandwidth_target,
        }
    }

    fn label(&self) -> &'static str {
        match self {
            Axis::SnrDb => "SNR (dB)",
            Axis::BlockLength => "block length L",
            Axis::BandwidthRatio => "bandwidth ratio d/M",
        }
    }

    /// Name of a row's series: scheme plus the coordinates not on this axis.
    fn series(&self, r: &SweepRow) -> String {
        let s = r.scheme.as_str();
        match self {
            Axis::SnrDb => format!("{s} L={} d/M={}", r.block_length, r.bandwidth_target),
            Axis::BlockLength => format!("{s} {} dB d/M={}", r.snr_db, r.bandwidth_target),
            Axis::BandwidthRatio => format!("{s} {} dB L={}", r.snr_db, r.block_length),
        }
    }
}

/// The first axis along which the rows vary, SNR preferred.
pub fn varying_axis(rows: &[SweepRow]) -> Axis {
    let varies = |f: &dyn Fn(&SweepRow) -> f64| rows.iter().any(|r| f(r) != f(&rows[0]));
    if rows.is_empty() || varies(&|r| r.snr_db) {
        Axis::SnrDb
    } else if varies(&|r| r.block_length as f64) {
        Axis::BlockLength
    } else {
        Axis::BandwidthRatio
    }
}

/// Quality (dB) of the feasible rows against `axis`, one line per series.
pub fn plot_quality(rows: &[SweepRow], axis: Axis, path: &Path) -> Result<(), HarnessError> {
    let mut series: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.feasible && r.quality_db.is_finite()) {
        series.entry(axis.series(r)).or_default().push((axis.value(r), r.quality_db));
    }
    for pts in series.values_mut() {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    let all = series.values().flatten();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    let pad = ((y1 - y0) * 0.05).max(0.5);
    let err = |e: &dyn std::fmt::Display| HarnessError::Plot(e.to_string());

    let root = SVGBackend::new(path, (800, 560)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| err(&e))?;
    let mut chart = ChartBuilder::on(&root)
        .margin(16)
        .x_label_area_size(40)
        .y_label_area_size(56)
        .build_cartesian_2d(x0..x1, (y0 - pad)..(y1 + pad))
        .map_err(|e| err(&e))?;
    chart.configure_mesh().x_desc(axis.label()).y_desc("quality (dB)").draw().map_err(|e| err(&e))?;
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))
            .map_err(|e| err(&e))?
            .label(name.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .position(SeriesLabelPosition::LowerRight)
        .draw()
        .map_err(|e| err(&e))?;
    root.present().map_err(|e| err(&e))?;
    Ok(())
}
