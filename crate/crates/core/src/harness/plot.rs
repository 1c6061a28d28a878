//! Line charts (SVG) and their numeric data (CSV) from metrics files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use plotters::prelude::*;

use crate::error::{Error, Result};
use crate::harness::metrics::{read_metrics, MetricRow};

/// Training-stage bins: quartiles of the run's total iterations.
pub const STAGES: usize = 4;

/// Stage bin of an evaluation taken after `train_iter` of `total` iterations.
pub fn stage_of(train_iter: u64, total: u64) -> usize {
    if total == 0 {
        return 0;
    }
    ((train_iter.saturating_sub(1) * STAGES as u64 / total) as usize).min(STAGES - 1)
}

#[derive(Clone, Debug, Default)]
pub struct PlotOutputs {
    pub files: Vec<PathBuf>,
}

type Series = (String, Vec<(f64, f64)>);

#[derive(Default, Clone, Copy)]
struct Acc {
    full: f64,
    lower: f64,
    count: usize,
}

impl Acc {
    fn add(&mut self, r: &MetricRow) {
        self.full += r.edge_acc_full;
        self.lower += r.edge_acc_lower;
        self.count += 1;
    }

    fn means(&self) -> (f64, f64) {
        let c = self.count.max(1) as f64;
        (self.full / c, self.lower / c)
    }
}

fn model_order(name: &str) -> (usize, String) {
    let rank = crate::baselines::ModelKind::ALL
        .iter()
        .position(|k| k.as_str() == name)
        .unwrap_or(usize::MAX);
    (rank, name.to_string())
}

fn line_chart(path: &Path, title: &str, x_desc: &str, series: &[Series]) -> Result<()> {
    let plot_err = |e: &dyn std::fmt::Display| Error::Plot(format!("{}: {e}", path.display()));
    let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
    for (_, pts) in series {
        for &(x, _) in pts {
            x0 = x0.min(x);
            x1 = x1.max(x);
        }
    }
    if x0 >= x1 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    let root = SVGBackend::new(path, (800, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(&e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(55)
        .build_cartesian_2d(x0..x1, 0.0f64..1.0f64)
        .map_err(|e| plot_err(&e))?;
    chart
        .configure_mesh()
        .x_desc(x_desc)
        .y_desc("edge accuracy")
        .draw()
        .map_err(|e| plot_err(&e))?;
    for (idx, (name, pts)) in series.iter().enumerate() {
        let color = Palette99::pick(idx).to_rgba();
        chart
            .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))
            .map_err(|e| plot_err(&e))?
            .label(name.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .position(SeriesLabelPosition::LowerRight)
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| plot_err(&e))?;
    root.present().map_err(|e| plot_err(&e))?;
    Ok(())
}

fn write_file(files: &mut Vec<PathBuf>, path: PathBuf, text: &str) -> Result<()> {
    std::fs::write(&path, text)?;
    files.push(path);
    Ok(())
}

/// Reads every metrics file and writes, into `out_dir`:
/// `stages_<model>.{svg,csv}` (per-step accuracy binned by training stage),
/// `comparison.{svg,csv}` (per-step accuracy of each model's last
/// evaluation, averaged over seeds) and `training_curve.{svg,csv}`
/// (end-of-episode accuracy over training).
pub fn emit_plot(inputs: &[PathBuf], out_dir: &Path) -> Result<PlotOutputs> {
    if inputs.is_empty() {
        return Err(Error::InvalidArgument("no metrics files given".into()));
    }
    let mut rows = Vec::new();
    for path in inputs {
        rows.extend(read_metrics(path)?.into_iter().filter(MetricRow::is_eval));
    }
    if rows.is_empty() {
        return Err(Error::InvalidArgument("metrics files contain no evaluation rows".into()));
    }
    let mut by_model: BTreeMap<(usize, String), Vec<&MetricRow>> = BTreeMap::new();
    for r in &rows {
        by_model.entry(model_order(&r.model)).or_default().push(r);
    }
    std::fs::create_dir_all(out_dir)?;
    let mut files = Vec::new();

    for ((_, model), model_rows) in &by_model {
        let total = model_rows.iter().map(|r| r.train_iter).max().unwrap_or(0);
        let mut bins: BTreeMap<(usize, usize), Acc> = BTreeMap::new();
        for r in model_rows {
            bins.entry((stage_of(r.train_iter, total), r.episode_step))
                .or_default()
                .add(r);
        }
        let mut csv = String::from("stage,iter_from,iter_to,episode_step,edge_acc_full,edge_acc_lower\n");
        let mut series: Vec<Series> = Vec::new();
        for stage in 0..STAGES {
            let from = stage as u64 * total / STAGES as u64 + 1;
            let to = (stage as u64 + 1) * total / STAGES as u64;
            let mut pts = Vec::new();
            for (&(_, step), acc) in bins.range((stage, 0)..(stage + 1, 0)) {
                let (full, lower) = acc.means();
                writeln!(csv, "{},{from},{to},{step},{full},{lower}", stage + 1).unwrap();
                pts.push((step as f64, full));
            }
            if !pts.is_empty() {
                series.push((format!("iterations {from}-{to}"), pts));
            }
        }
        write_file(&mut files, out_dir.join(format!("stages_{model}.csv")), &csv)?;
        let svg = out_dir.join(format!("stages_{model}.svg"));
        line_chart(&svg, &format!("{model}: accuracy within an episode by training stage"), "episode step", &series)?;
        files.push(svg);
    }

    let mut csv = String::from("model,train_iter,episode_step,edge_acc_full,edge_acc_lower\n");
    let mut series = Vec::new();
    for ((_, model), model_rows) in &by_model {
        let mut last: BTreeMap<u64, u64> = BTreeMap::new();
        for r in model_rows {
            let e = last.entry(r.seed).or_insert(0);
            *e = (*e).max(r.train_iter);
        }
        let mut steps: BTreeMap<usize, Acc> = BTreeMap::new();
        for r in model_rows.iter().filter(|r| last[&r.seed] == r.train_iter) {
            steps.entry(r.episode_step).or_default().add(r);
        }
        let iter = last.values().max().copied().unwrap_or(0);
        let mut pts = Vec::new();
        for (step, acc) in &steps {
            let (full, lower) = acc.means();
            writeln!(csv, "{model},{iter},{step},{full},{lower}").unwrap();
            pts.push((*step as f64, full));
        }
        series.push((model.clone(), pts));
    }
    write_file(&mut files, out_dir.join("comparison.csv"), &csv)?;
    let svg = out_dir.join("comparison.svg");
    line_chart(&svg, "accuracy within an episode at the end of training", "episode step", &series)?;
    files.push(svg);

    let mut csv = String::from("model,train_iter,edge_acc_full,edge_acc_lower\n");
    let mut series = Vec::new();
    for ((_, model), model_rows) in &by_model {
        let final_step = model_rows.iter().map(|r| r.episode_step).max().unwrap_or(0);
        let mut iters: BTreeMap<u64, Acc> = BTreeMap::new();
        for r in model_rows.iter().filter(|r| r.episode_step == final_step) {
            iters.entry(r.train_iter).or_default().add(r);
        }
        let mut pts = Vec::new();
        for (iter, acc) in &iters {
            let (full, lower) = acc.means();
            writeln!(csv, "{model},{iter},{full},{lower}").unwrap();
            pts.push((*iter as f64, full));
        }
        series.push((model.clone(), pts));
    }
    write_file(&mut files, out_dir.join("training_curve.csv"), &csv)?;
    let svg = out_dir.join("training_curve.svg");
    line_chart(&svg, "end-of-episode accuracy during training", "training iteration", &series)?;
    files.push(svg);

    Ok(PlotOutputs { files })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quartile_bins() {
        assert_eq!(stage_of(1, 20_000), 0);
        assert_eq!(stage_of(5000, 20_000), 0);
        assert_eq!(stage_of(5001, 20_000), 1);
        assert_eq!(stage_of(15_000, 20_000), 2);
        assert_eq!(stage_of(20_000, 20_000), 3);
        assert_eq!(stage_of(0, 0), 0);
    }

    #[test]
    fn empty_input_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("plots");
        assert!(emit_plot(&[], &out).is_err());
        assert!(!out.exists());
    }
}
