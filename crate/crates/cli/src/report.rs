//! Learning-curve plots and per-stage summary tables.

use std::path::{Path, PathBuf};

use anyhow::Context;
use plotters::prelude::*;
use spinrally::learner::EpochMetrics;

#[derive(Debug, Clone)]
pub struct ReportFiles {
    pub svg: PathBuf,
    pub table: PathBuf,
}

type Getter = fn(&EpochMetrics) -> f64;

const PANELS: [(&str, Getter); 4] = [
    ("mean step reward", |m| m.mean_reward),
    ("catch rate", |m| m.catch_rate),
    ("return rate", |m| m.return_rate),
    ("target error (m)", |m| m.target_error),
];

/// Epochs at which a new stage starts.
fn stage_starts(rows: &[EpochMetrics]) -> Vec<usize> {
    rows.windows(2).filter(|w| w[0].stage != w[1].stage).map(|w| w[1].epoch).collect()
}

fn finite_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-3);
    (lo - pad, hi + pad)
}

fn plot(rows: &[EpochMetrics], path: &Path) -> anyhow::Result<()> {
    let root = SVGBackend::new(path, (1200, 800)).into_drawing_area();
    root.fill(&WHITE)?;
    let x_max = rows.last().map_or(1, |m| m.epoch + 1).max(1);
    let starts = stage_starts(rows);
    for (area, (name, get)) in root.split_evenly((2, 2)).iter().zip(PANELS) {
        let (y0, y1) = finite_range(rows.iter().map(get));
        let mut chart = ChartBuilder::on(area)
            .caption(name, ("sans-serif", 20))
            .margin(10)
            .x_label_area_size(30)
            .y_label_area_size(50)
            .build_cartesian_2d(0..x_max, y0..y1)?;
        chart.configure_mesh().x_desc("epoch").draw()?;
        for &s in &starts {
            chart.draw_series(LineSeries::new([(s, y0), (s, y1)], BLACK.mix(0.4)))?;
        }
        // NaN values split the curve.
        let mut segment = Vec::new();
        for m in rows {
            let v = get(m);
            if v.is_finite() {
                segment.push((m.epoch, v));
            } else if !segment.is_empty() {
                chart.draw_series(LineSeries::new(std::mem::take(&mut segment), &BLUE))?;
            }
        }
        if !segment.is_empty() {
            chart.draw_series(LineSeries::new(segment, &BLUE))?;
        }
    }
    root.present()?;
    Ok(())
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.filter(|x| x.is_finite()).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Markdown table: per stage, means over its last five epochs.
pub fn stage_table(rows: &[EpochMetrics]) -> String {
    let mut s = String::from("| stage | epochs | mean step reward | catch rate | return rate | return after catch | target error (m) |\n");
    s.push_str("|---|---|---|---|---|---|---|\n");
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
    for stage in 1..=3u8 {
        let in_stage: Vec<&EpochMetrics> = rows.iter().filter(|m| m.stage == stage).collect();
        if in_stage.is_empty() {
            continue;
        }
        let tail = &in_stage[in_stage.len().saturating_sub(5)..];
        s.push_str(&format!(
            "| {stage} | {} | {} | {} | {} | {} | {} |\n",
            in_stage.len(),
            fmt(mean(tail.iter().map(|m| m.mean_reward))),
            fmt(mean(tail.iter().map(|m| m.catch_rate))),
            fmt(mean(tail.iter().map(|m| m.return_rate))),
            fmt(mean(tail.iter().map(|m| m.return_after_catch))),
            fmt(mean(tail.iter().map(|m| m.target_error))),
        ));
    }
    s
}

/// Writes `learning_curves.svg` and `summary.md` into `out`.
pub fn render(rows: &[EpochMetrics], out: &Path) -> anyhow::Result<ReportFiles> {
    let svg = out.join("learning_curves.svg");
    plot(rows, &svg).with_context(|| format!("drawing {}", svg.display()))?;
    let table = out.join("summary.md");
    std::fs::write(&table, format!("# Training summary\n\nValues are means over the last five epochs of each stage.\n\n{}", stage_table(rows)))
        .with_context(|| format!("writing {}", table.display()))?;
    Ok(ReportFiles { svg, table })
}
