//! SVG figures for rate and NLL experiments.

use std::path::Path;

use plotters::prelude::*;

use crate::error::{Error, Result};
use crate::harness::{NllTrajectory, RateReport};

const SIZE: (u32, u32) = (720, 480);
const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(214, 39, 40),
    RGBColor(44, 160, 44),
    RGBColor(148, 103, 189),
    RGBColor(255, 127, 14),
    RGBColor(23, 190, 207),
];

fn draw_err<E: std::error::Error + Send + Sync>(e: DrawingAreaErrorKind<E>) -> Error {
    Error::Range(format!("plot rendering failed: {e}"))
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    let span = (hi - lo).abs().max(1e-9);
    (lo - 0.05 * span, hi + 0.05 * span)
}

/// Log10 mean loss against log10 n, with the fitted line and its slope.
pub fn write_rate_svg(report: &RateReport, path: &Path) -> Result<()> {
    let pts: Vec<(f64, f64)> = report
        .points
        .iter()
        .filter(|p| p.mean_loss > 0.0 && p.mean_loss.is_finite())
        .map(|p| ((p.n as f64).log10(), p.mean_loss.log10()))
        .collect();
    if pts.is_empty() {
        return Err(Error::Range("no finite points to plot".into()));
    }
    let (x0, x1) = padded(
        pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min),
        pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max),
    );
    let fitted = |lx: f64| report.intercept + report.slope * lx * std::f64::consts::LN_10;
    let line: Vec<(f64, f64)> = [x0, x1].iter().map(|&lx| (lx, fitted(lx) / std::f64::consts::LN_10)).collect();
    let ys = pts.iter().map(|p| p.1).chain(line.iter().map(|p| p.1)).filter(|v| v.is_finite());
    let (y0, y1) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let (y0, y1) = padded(y0, y1);

    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let title = format!("{} / {} gate / k = {}", report.scenario, report.gate, report.k);
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(56)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(draw_err)?;
    chart
        .configure_mesh()
        .x_desc("log10 n")
        .y_desc("log10 mean loss")
        .draw()
        .map_err(draw_err)?;
    chart
        .draw_series(pts.iter().map(|&p| Circle::new(p, 4, PALETTE[0].filled())))
        .map_err(draw_err)?
        .label("mean over replications")
        .legend(|(x, y)| Circle::new((x + 10, y), 4, PALETTE[0].filled()));
    chart
        .draw_series(LineSeries::new(line, PALETTE[1].stroke_width(2)))
        .map_err(draw_err)?
        .label(format!("slope {:.3} (R^2 {:.3})", report.slope, report.r_squared))
        .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], PALETTE[1].stroke_width(2)));
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(draw_err)?;
    root.present().map_err(draw_err)
}

/// Overlaid NLL trajectories, one line per gate.
pub fn write_nll_svg(trajectories: &[NllTrajectory], path: &Path) -> Result<()> {
    let values = trajectories.iter().flat_map(|t| t.nll.iter().copied()).filter(|v| v.is_finite());
    let (y0, y1) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !y0.is_finite() {
        return Err(Error::Range("no finite trajectory values to plot".into()));
    }
    let (y0, y1) = padded(y0, y1);
    let len = trajectories.iter().map(|t| t.nll.len()).max().unwrap_or(1).max(2);

    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("negative log-likelihood per EM iteration", ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(72)
        .build_cartesian_2d(0.0..(len - 1) as f64, y0..y1)
        .map_err(draw_err)?;
    chart
        .configure_mesh()
        .x_desc("iteration")
        .y_desc("NLL")
        .draw()
        .map_err(draw_err)?;
    for (i, t) in trajectories.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let series = t.nll.iter().enumerate().map(|(it, &v)| (it as f64, v));
        chart
            .draw_series(LineSeries::new(series, color.stroke_width(2)))
            .map_err(draw_err)?
            .label(t.gate.to_string())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(draw_err)?;
    root.present().map_err(draw_err)
}
