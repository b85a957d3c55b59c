//! Static SVG figures: loss curves, per-variable MAE bars and a
//! truth/prediction overlay.

use std::path::Path;

use anyhow::{ensure, Context, Result};
use fairforecast_core::aggregate;
use plotters::prelude::*;

use crate::args::PlotArgs;
use crate::commands::{load_run, scaled_predictions};
use crate::setup::{resolve_out, DirLock, HISTORY_FILE};
use crate::UsageError;

pub const BAR_COLOR: RGBColor = RGBColor(70, 130, 180);

const LOSS_COLUMNS: [(&str, RGBColor); 5] = [
    ("l_forecast", RGBColor(31, 119, 180)),
    ("l_cluster", RGBColor(255, 127, 14)),
    ("l_ortho", RGBColor(44, 160, 44)),
    ("l_adv", RGBColor(214, 39, 40)),
    ("total", RGBColor(0, 0, 0)),
];

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if !(lo.is_finite() && hi.is_finite()) || hi <= lo {
        let c = if lo.is_finite() { lo } else { 0.0 };
        return (c - 1.0, c + 1.0);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn plot_err<E: std::error::Error + Send + Sync + 'static>(e: DrawingAreaErrorKind<E>) -> anyhow::Error {
    anyhow::anyhow!("drawing failed: {e}")
}

/// Reads `history.csv` into one series per loss column.
fn read_history(path: &Path) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut iters = Vec::new();
    let mut cols = vec![Vec::new(); LOSS_COLUMNS.len()];
    for rec in reader.records() {
        let rec = rec?;
        iters.push(rec[0].parse::<f64>()?);
        for (j, col) in cols.iter_mut().enumerate() {
            col.push(rec[j + 1].parse::<f64>()?);
        }
    }
    Ok((iters, cols))
}

pub fn loss_curves(history: &Path, out: &Path) -> Result<()> {
    let (iters, cols) = read_history(history)?;
    let x_max = iters.last().copied().unwrap_or(1.0).max(1.0);
    let all = cols.iter().flatten().copied();
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (lo, hi) = padded(lo, hi);

    let root = SVGBackend::new(out, (900, 520)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("training losses", ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(70)
        .build_cartesian_2d(0.0..x_max, lo..hi)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("iteration")
        .y_desc("loss")
        .draw()
        .map_err(plot_err)?;
    for ((name, color), col) in LOSS_COLUMNS.iter().zip(&cols) {
        let color = *color;
        chart
            .draw_series(LineSeries::new(iters.iter().copied().zip(col.iter().copied()), color))
            .map_err(plot_err)?
            .label(*name)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.85))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

/// One bar per variable.
pub fn mae_bars(maes: &[f64], title: &str, out: &Path) -> Result<()> {
    let n = maes.len();
    let top = maes.iter().copied().fold(0.0f64, f64::max);
    let top = if top > 0.0 { top * 1.1 } else { 1.0 };
    let root = SVGBackend::new(out, (900, 520)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(70)
        .build_cartesian_2d(0.0..n as f64, 0.0..top)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_desc("variable")
        .y_desc("MAE")
        .draw()
        .map_err(plot_err)?;
    chart
        .draw_series(maes.iter().enumerate().map(|(i, &m)| {
            let x = i as f64;
            Rectangle::new([(x + 0.1, 0.0), (x + 0.9, m)], BAR_COLOR.filled())
        }))
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

pub fn overlay(xs: &[f64], truth: &[f64], pred: &[f64], title: &str, out: &Path) -> Result<()> {
    let (x0, x1) = (xs.first().copied().unwrap_or(0.0), xs.last().copied().unwrap_or(1.0));
    let both = truth.iter().chain(pred).copied();
    let (lo, hi) = both.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (lo, hi) = padded(lo, hi);
    let root = SVGBackend::new(out, (1000, 460)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(70)
        .build_cartesian_2d(x0..x1.max(x0 + 1.0), lo..hi)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("time step")
        .y_desc("value")
        .draw()
        .map_err(plot_err)?;
    for (name, ys, color) in [("truth", truth, BLACK), ("prediction", pred, RED)] {
        chart
            .draw_series(LineSeries::new(xs.iter().copied().zip(ys.iter().copied()), color))
            .map_err(plot_err)?
            .label(name)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.85))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

pub fn plot(root: Option<&Path>, args: &PlotArgs) -> Result<()> {
    let run_dir = resolve_out(root, &args.run);
    ensure!(run_dir.is_dir(), "run directory {} does not exist", run_dir.display());
    let out = args
        .out
        .as_deref()
        .map_or_else(|| run_dir.join("plots"), |o| resolve_out(root, o));
    let _lock = DirLock::acquire(&out)?;

    let history = run_dir.join(HISTORY_FILE);
    ensure!(history.exists(), "missing {}", history.display());
    loss_curves(&history, &out.join("loss_curves.svg"))?;

    let run = load_run(&run_dir, None, None)?;
    let dims = run.trainer.model.dims;
    if args.variable >= dims.n_vars {
        return Err(UsageError(format!("--variable must be below {}", dims.n_vars)).into());
    }
    if args.step == 0 || args.step > dims.horizon {
        return Err(UsageError(format!("--step must lie in 1..={}", dims.horizon)).into());
    }
    let split = args.split.as_str();
    let windows = run.prep.windows(args.split)?;
    let scale = run.trainer.config.metric_scale;
    let (y, p) = scaled_predictions(&run, windows, scale)?;
    let report = aggregate(&y, &p, scale)?;
    mae_bars(
        &report.per_variable_mae,
        &format!("per-variable MAE ({split}, {scale} scale)"),
        &out.join(format!("per_variable_mae_{split}.svg")),
    )?;

    let (v, s) = (args.variable, args.step - 1);
    let anchors = windows.batch(&(0..windows.len()).collect::<Vec<_>>()).anchor_indices;
    let xs: Vec<f64> = anchors.iter().map(|&a| (a + 1 + s) as f64).collect();
    let truth: Vec<f64> = (0..anchors.len()).map(|b| y.get(&[b, s, v])).collect();
    let pred: Vec<f64> = (0..anchors.len()).map(|b| p.get(&[b, s, v])).collect();
    let label = run
        .names
        .as_ref()
        .and_then(|n| n.get(v).cloned())
        .unwrap_or_else(|| format!("variable {v}"));
    overlay(
        &xs,
        &truth,
        &pred,
        &format!("{label}, step {} ahead ({split})", args.step),
        &out.join(format!("overlay_var{v}_{split}.svg")),
    )?;
    println!("figures written to {}", out.display());
    Ok(())
}
