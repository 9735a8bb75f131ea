//! Static SVG figures, each paired with the CSV of exactly the points drawn.

use std::path::{Path, PathBuf};

use plotters::prelude::*;

use super::{MetricRow, MetricsLog};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Figure {
    /// Performance heatmap, tasks × training time, one per continual run.
    Continual,
    /// Held-out LL of the task model over trials, with ground-truth references.
    TaskModel,
    /// Test loss of the second task after pretraining vs from scratch.
    TransferForward,
    /// Test loss of both tasks while the second one trains.
    TransferBackward,
    /// Target-task accuracy while adapting.
    Compgen,
}

impl Figure {
    pub const ALL: [Figure; 5] =
        [Figure::Continual, Figure::TaskModel, Figure::TransferForward, Figure::TransferBackward, Figure::Compgen];

    pub fn name(self) -> &'static str {
        match self {
            Figure::Continual => "continual",
            Figure::TaskModel => "taskmodel",
            Figure::TransferForward => "transfer_fwd",
            Figure::TransferBackward => "transfer_bwd",
            Figure::Compgen => "compgen",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|f| f.name() == s).ok_or_else(|| Error::Plot(format!("unknown figure {s:?}")))
    }

    fn matches(self, r: &MetricRow) -> bool {
        let prefix = match self {
            Figure::Continual => "continual/",
            Figure::TaskModel => "taskmodel/",
            Figure::TransferForward => "transfer_fwd/",
            Figure::TransferBackward => "transfer_bwd/",
            Figure::Compgen => "compgen/",
        };
        // pretraining is counted in batches, adaptation in trials
        r.run_id.starts_with(prefix) && !(self == Figure::Compgen && r.phase == "pretrain")
    }
}

fn plot_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Plot(e.to_string())
}

const PALETTE: [RGBColor; 8] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
    RGBColor(227, 119, 194),
    RGBColor(127, 127, 127),
];

fn file_stem(run_id: &str) -> String {
    run_id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

fn first_seen<'a>(rows: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for r in rows {
        if !out.iter().any(|o| o == r) {
            out.push(r.to_string());
        }
    }
    out
}

fn write_rows(path: &Path, rows: &[&MetricRow]) -> Result<()> {
    let mut log = MetricsLog::new();
    for r in rows {
        log.push((*r).clone())?;
    }
    log.write_csv(path)
}

/// Every figure that the log has rows for. Errors on an empty log.
pub fn emit_plots(log: &MetricsLog, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if log.is_empty() {
        return Err(Error::Plot("metrics log is empty".into()));
    }
    let mut out = Vec::new();
    for fig in Figure::ALL {
        if log.rows().iter().any(|r| fig.matches(r)) {
            out.extend(emit_figure(log, fig, out_dir)?);
        }
    }
    Ok(out)
}

/// One figure; errors when the log has no rows for it.
pub fn emit_figure(log: &MetricsLog, fig: Figure, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let rows: Vec<&MetricRow> = log.rows().iter().filter(|r| fig.matches(r)).collect();
    if rows.is_empty() {
        return Err(Error::Plot(format!("no rows for figure {}", fig.name())));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    match fig {
        Figure::Continual => {
            let mut files = Vec::new();
            for run in first_seen(rows.iter().map(|r| r.run_id.as_str())) {
                let rr: Vec<&MetricRow> = rows.iter().copied().filter(|r| r.run_id == run).collect();
                let stem = out_dir.join(format!("heatmap_{}", file_stem(&run)));
                heatmap(&rr, &run, &stem.with_extension("svg"))?;
                write_rows(&stem.with_extension("csv"), &rr)?;
                files.push(stem.with_extension("svg"));
                files.push(stem.with_extension("csv"));
            }
            Ok(files)
        }
        Figure::TaskModel => curves(&rows, fig, out_dir, "task-model trials", "held-out LL per trial", |r| r.task_model_ll, false),
        Figure::TransferForward | Figure::TransferBackward => {
            curves(&rows, fig, out_dir, "batches", "log10 test loss", |r| r.test_loss.map(f64::log10), true)
        }
        Figure::Compgen => curves(&rows, fig, out_dir, "target-task trials", "accuracy", |r| r.performance, false),
    }
}

fn heatmap(rows: &[&MetricRow], title: &str, path: &Path) -> Result<()> {
    let tasks = first_seen(rows.iter().map(|r| r.eval_task.as_str()));
    let steps = first_seen(rows.iter().map(|r| r.global_step.to_string()).collect::<Vec<_>>().iter().map(String::as_str));
    let steps: Vec<u64> = steps.iter().map(|s| s.parse().expect("step")).collect();
    let max = *steps.last().unwrap_or(&1) as f64;
    let root = SVGBackend::new(path, (900, 80 + 40 * tasks.len() as u32)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 16))
        .margin(10)
        .x_label_area_size(30)
        .y_label_area_size(110)
        .build_cartesian_2d(0.0..max.max(1.0), 0.0..tasks.len() as f64)
        .map_err(plot_err)?;
    let names = tasks.clone();
    chart
        .configure_mesh()
        .disable_mesh()
        .x_desc("batches")
        .y_labels(tasks.len())
        .y_label_formatter(&|y| {
            let i = y.floor() as usize;
            names.get(names.len().saturating_sub(i + 1)).cloned().unwrap_or_default()
        })
        .draw()
        .map_err(plot_err)?;
    let cell = |r: &MetricRow| {
        let i = tasks.iter().position(|t| *t == r.eval_task).unwrap_or(0);
        let k = steps.iter().position(|&s| s == r.global_step).unwrap_or(0);
        let x0 = if k == 0 { 0.0 } else { steps[k - 1] as f64 };
        let y0 = (tasks.len() - 1 - i) as f64;
        let p = r.performance.unwrap_or(0.0).clamp(0.0, 1.0);
        // white (0) to dark blue (1)
        let c = RGBColor((255.0 * (1.0 - p)) as u8, (255.0 - 200.0 * p) as u8, (255.0 - 105.0 * p) as u8);
        Rectangle::new([(x0, y0), (r.global_step as f64, y0 + 1.0)], c.filled())
    };
    chart.draw_series(rows.iter().map(|r| cell(r))).map_err(plot_err)?;
    root.present().map_err(plot_err)
}

#[allow(clippy::too_many_arguments)]
fn curves(
    rows: &[&MetricRow],
    fig: Figure,
    out_dir: &Path,
    x_desc: &str,
    y_desc: &str,
    value: impl Fn(&MetricRow) -> Option<f64>,
    relative_to_second: bool,
) -> Result<Vec<PathBuf>> {
    // one series per (run, eval task); reference rows become dashed lines
    let mut series: Vec<(String, bool, Vec<(f64, f64)>)> = Vec::new();
    let mut drawn: Vec<&MetricRow> = Vec::new();
    for run in first_seen(rows.iter().map(|r| r.run_id.as_str())) {
        let rr: Vec<&MetricRow> = rows.iter().copied().filter(|r| r.run_id == run).collect();
        let offset = if relative_to_second {
            rr.iter().filter(|r| r.phase == "first").map(|r| r.global_step).max().unwrap_or(0)
        } else {
            0
        };
        for task in first_seen(rr.iter().map(|r| r.eval_task.as_str())) {
            let pts: Vec<(&MetricRow, f64, f64)> = rr
                .iter()
                .filter(|r| r.eval_task == task)
                .filter_map(|r| value(r).map(|v| (*r, r.global_step as f64 - offset as f64, v)))
                .filter(|p| p.2.is_finite())
                .collect();
            if pts.is_empty() {
                continue;
            }
            let is_ref = pts[0].0.phase == "reference";
            drawn.extend(pts.iter().map(|p| p.0));
            series.push((format!("{run} {task}"), is_ref, pts.iter().map(|p| (p.1, p.2)).collect()));
        }
    }
    if series.is_empty() {
        return Err(Error::Plot(format!("figure {} has no plottable values", fig.name())));
    }
    let xs = series.iter().flat_map(|s| s.2.iter().map(|p| p.0));
    let (x0, x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    let ys = series.iter().flat_map(|s| s.2.iter().map(|p| p.1));
    let (y0, y1) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), y| (a.min(y), b.max(y)));
    let (x0, x1) = if x1 > x0 { (x0, x1) } else { (x0 - 1.0, x0 + 1.0) };
    let pad = ((y1 - y0) * 0.05).max(1e-3);
    let path = out_dir.join(format!("{}.svg", fig.name()));
    {
        let root = SVGBackend::new(&path, (1000, 650)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let mut chart = ChartBuilder::on(&root)
            .caption(fig.name(), ("sans-serif", 18))
            .margin(10)
            .x_label_area_size(35)
            .y_label_area_size(55)
            .build_cartesian_2d(x0..x1, (y0 - pad)..(y1 + pad))
            .map_err(plot_err)?;
        chart.configure_mesh().x_desc(x_desc).y_desc(y_desc).draw().map_err(plot_err)?;
        for (i, (label, is_ref, pts)) in series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            if *is_ref {
                let y = pts[0].1;
                chart
                    .draw_series(DashedLineSeries::new([(x0, y), (x1, y)], 6, 4, color.stroke_width(1)))
                    .map_err(plot_err)?
                    .label(label.clone())
                    .legend(move |(x, y)| PathElement::new([(x, y), (x + 16, y)], color));
            } else {
                chart
                    .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))
                    .map_err(plot_err)?
                    .label(label.clone())
                    .legend(move |(x, y)| PathElement::new([(x, y), (x + 16, y)], color));
            }
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .label_font(("sans-serif", 10))
            .draw()
            .map_err(plot_err)?;
        root.present().map_err(plot_err)?;
    }
    let csv = path.with_extension("csv");
    let keep: std::collections::HashSet<*const MetricRow> = drawn.iter().map(|r| *r as *const MetricRow).collect();
    let drawn: Vec<&MetricRow> = rows.iter().copied().filter(|r| keep.contains(&(*r as *const MetricRow))).collect();
    write_rows(&csv, &drawn)?;
    Ok(vec![path, csv])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(run: &str, phase: &str, step: u64, task: &str, v: f64) -> MetricRow {
        MetricRow {
            run_id: run.into(),
            seed: 0,
            phase: phase.into(),
            global_step: step,
            trained_task: task.into(),
            eval_task: task.into(),
            test_loss: Some(v),
            performance: Some(v),
            task_model_ll: Some(-v),
        }
    }

    #[test]
    fn empty_requests_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(emit_plots(&MetricsLog::new(), dir.path()), Err(Error::Plot(_))));
        let mut log = MetricsLog::new();
        log.push(row("continual/x/0/s0", "continual", 1, "DelayPro", 0.5)).unwrap();
        assert!(matches!(emit_figure(&log, Figure::Compgen, dir.path()), Err(Error::Plot(_))));
    }

    #[test]
    fn figures_and_data_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let mut log = MetricsLog::new();
        for s in 1..4 {
            log.push(row("continual/x/0/s0", "continual", s, "DelayPro", 0.3 * s as f64)).unwrap();
            log.push(row("continual/x/0/s0", "continual", s, "DelayAnti", 0.2)).unwrap();
            log.push(row("compgen/context_rnn/s0/adapt", "adapt", s, "MemoryAnti", 0.25 * s as f64)).unwrap();
        }
        log.push(row("compgen/reference/adam/s0", "reference", 512, "MemoryAnti", 0.56)).unwrap();
        let files = emit_plots(&log, dir.path()).unwrap();
        assert_eq!(files.len(), 4);
        for f in &files {
            let text = std::fs::read_to_string(f).unwrap();
            assert!(!text.is_empty());
        }
        let svg = std::fs::read_to_string(&files[0]).unwrap();
        assert!(svg.contains("<svg"));
        let data = MetricsLog::read_csv(&files[3]).unwrap();
        assert_eq!(data.len(), 4);
    }

    #[test]
    fn curve_data_keeps_log_order_across_tasks() {
        let dir = tempfile::tempdir().unwrap();
        let mut log = MetricsLog::new();
        for s in 1..4 {
            log.push(row("transfer_bwd/adam/A>B/s0", "second", s, "DelayPro", 0.1 * s as f64)).unwrap();
            log.push(row("transfer_bwd/adam/A>B/s0", "second", s, "DelayAnti", 0.2 * s as f64)).unwrap();
        }
        let files = emit_figure(&log, Figure::TransferBackward, dir.path()).unwrap();
        let data = MetricsLog::read_csv(&files[1]).unwrap();
        assert_eq!(data.rows(), log.rows());
    }
}
