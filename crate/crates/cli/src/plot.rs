//! Static SVG figures from the experiment CSVs.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Result};
use plotters::prelude::*;

use puckmeta_core::experiment::{read_spread_csv, read_summary_csv, read_sweep_csv, Method, SummaryRow};
use puckmeta_core::Error;

const WIDTH: u32 = 1200;
const HEIGHT: u32 = 900;

fn color(method: Method) -> RGBColor {
    match method {
        Method::Meta => RGBColor(31, 119, 180),
        Method::Baseline => RGBColor(214, 39, 40),
        Method::Oracle => RGBColor(80, 80, 80),
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()).into());
    }
    Ok(BufReader::new(File::open(path)?))
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-6);
    (lo - pad, hi + pad)
}

fn plot_err<E: std::fmt::Debug>(e: E) -> anyhow::Error {
    anyhow!("plotting failed: {e:?}")
}

/// One panel per condition: mean reward against adaptation step with a
/// 95% band.
fn adaptation_curves(rows: &[SummaryRow], out: &Path) -> Result<()> {
    let mut conditions: Vec<&str> = Vec::new();
    for r in rows {
        if !conditions.contains(&r.condition.as_str()) {
            conditions.push(&r.condition);
        }
    }
    let root = SVGBackend::new(out, (WIDTH, HEIGHT)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let cols = 2;
    let rows_n = conditions.len().div_ceil(cols).max(1);
    let panels = root.split_evenly((rows_n, cols));
    for (panel, condition) in panels.iter().zip(&conditions) {
        let sel: Vec<&SummaryRow> = rows.iter().filter(|r| r.condition == *condition).collect();
        let max_step = sel.iter().map(|r| r.step).max().unwrap_or(0) as f64;
        let (lo, hi) = bounds(sel.iter().flat_map(|r| {
            [r.mean - 1.96 * r.std_error, r.mean + 1.96 * r.std_error]
        }));
        let mut chart = ChartBuilder::on(panel)
            .caption(*condition, ("sans-serif", 20))
            .margin(10)
            .x_label_area_size(30)
            .y_label_area_size(50)
            .build_cartesian_2d(0.0..max_step.max(1.0), lo..hi)
            .map_err(plot_err)?;
        chart
            .configure_mesh()
            .x_desc("adaptation step")
            .y_desc("mean reward")
            .draw()
            .map_err(plot_err)?;
        for method in Method::ALL {
            let mut pts: Vec<&&SummaryRow> = sel.iter().filter(|r| r.method == method).collect();
            if pts.is_empty() {
                continue;
            }
            pts.sort_by_key(|r| r.step);
            let c = color(method);
            let mut band: Vec<(f64, f64)> = pts
                .iter()
                .map(|r| (r.step as f64, r.mean + 1.96 * r.std_error))
                .collect();
            band.extend(
                pts.iter()
                    .rev()
                    .map(|r| (r.step as f64, r.mean - 1.96 * r.std_error)),
            );
            chart
                .draw_series(std::iter::once(Polygon::new(band, c.mix(0.15).filled())))
                .map_err(plot_err)?;
            chart
                .draw_series(LineSeries::new(
                    pts.iter().map(|r| (r.step as f64, r.mean)),
                    c.stroke_width(2),
                ))
                .map_err(plot_err)?
                .label(method.name())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], c.stroke_width(2)));
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .position(SeriesLabelPosition::LowerRight)
            .draw()
            .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)?;
    Ok(())
}

fn spread_curves(rows: &[(Method, usize, f64)], out: &Path) -> Result<()> {
    let root = SVGBackend::new(out, (WIDTH, HEIGHT / 2)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let max_step = rows.iter().map(|r| r.1).max().unwrap_or(0) as f64;
    let (_, hi) = bounds(rows.iter().map(|r| r.2));
    let mut chart = ChartBuilder::on(&root)
        .caption("latent spread across repetitions", ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(30)
        .y_label_area_size(60)
        .build_cartesian_2d(0.0..max_step.max(1.0), 0.0..hi)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("adaptation step")
        .y_desc("spread")
        .draw()
        .map_err(plot_err)?;
    for method in Method::ALL {
        let mut pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.0 == method)
            .map(|r| (r.1 as f64, r.2))
            .collect();
        if pts.is_empty() {
            continue;
        }
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let c = color(method);
        chart
            .draw_series(LineSeries::new(pts, c.stroke_width(2)))
            .map_err(plot_err)?
            .label(method.name())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], c.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .position(SeriesLabelPosition::UpperLeft)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

/// Final puck positions of the latent sweep, coloured by each latent
/// coordinate in turn.
fn sweep_scatter(rows: &[puckmeta_core::experiment::SweepRow], out: &Path) -> Result<()> {
    let root = SVGBackend::new(out, (WIDTH, HEIGHT / 2)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let (x_lo, x_hi) = bounds(rows.iter().map(|r| r.final_position.x));
    let (y_lo, y_hi) = bounds(rows.iter().map(|r| r.final_position.y));
    for (axis, panel) in root.split_evenly((1, 2)).iter().enumerate() {
        let mut chart = ChartBuilder::on(panel)
            .caption(format!("final position, colour = z{axis}"), ("sans-serif", 20))
            .margin(10)
            .x_label_area_size(30)
            .y_label_area_size(50)
            .build_cartesian_2d(x_lo..x_hi, y_lo..y_hi)
            .map_err(plot_err)?;
        chart
            .configure_mesh()
            .x_desc("x (m)")
            .y_desc("y (m)")
            .draw()
            .map_err(plot_err)?;
        chart
            .draw_series(rows.iter().map(|r| {
                let t = ((r.z.0[axis] + 2.5) / 5.0).clamp(0.0, 1.0);
                let c = RGBColor((255.0 * t) as u8, 60, (255.0 * (1.0 - t)) as u8);
                Circle::new((r.final_position.x, r.final_position.y), 2, c.filled())
            }))
            .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)?;
    Ok(())
}

/// Renders every figure whose CSV is present. The adaptation summary is
/// required; the others are drawn when available.
pub fn render_all(dir: &Path) -> Result<Vec<PathBuf>> {
    let summary = read_summary_csv(open(&dir.join("experiment_summary.csv"))?)?;
    let plots = dir.join("plots");
    std::fs::create_dir_all(&plots)?;
    let mut written = Vec::new();

    let out = plots.join("adaptation_curves.svg");
    adaptation_curves(&summary, &out)?;
    written.push(out);

    let spread_csv = dir.join("stability_spread.csv");
    if spread_csv.exists() {
        let out = plots.join("latent_spread.svg");
        spread_curves(&read_spread_csv(open(&spread_csv)?)?, &out)?;
        written.push(out);
    }
    let sweep_csv = dir.join("sweep_latent.csv");
    if sweep_csv.exists() {
        let out = plots.join("latent_sweep.svg");
        sweep_scatter(&read_sweep_csv(open(&sweep_csv)?)?, &out)?;
        written.push(out);
    }
    Ok(written)
}
