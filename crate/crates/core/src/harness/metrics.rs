//! Metrics CSV: one row per training iteration (`episode_step = 0`) and one
//! row per step of every evaluation block (`episode_step = 1..=k`).

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const METRICS_HEADER: &str = "model,train_iter,episode_step,edge_acc_full,edge_acc_lower,recon_loss,dec_loss,seed";

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub model: String,
    pub train_iter: u64,
    pub episode_step: usize,
    pub edge_acc_full: f64,
    pub edge_acc_lower: f64,
    pub recon_loss: f64,
    pub dec_loss: f64,
    pub seed: u64,
}

impl MetricRow {
    pub fn is_eval(&self) -> bool {
        self.episode_step > 0
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.model,
            self.train_iter,
            self.episode_step,
            self.edge_acc_full,
            self.edge_acc_lower,
            self.recon_loss,
            self.dec_loss,
            self.seed
        )
    }

    fn parse(line: &str) -> std::result::Result<Self, String> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(format!("expected 8 fields, found {}", fields.len()));
        }
        let int = |i: usize, name: &str| {
            fields[i]
                .trim()
                .parse::<u64>()
                .map_err(|_| format!("invalid {name} `{}`", fields[i]))
        };
        let float = |i: usize, name: &str| {
            fields[i]
                .trim()
                .parse::<f64>()
                .map_err(|_| format!("invalid {name} `{}`", fields[i]))
        };
        let model = fields[0].trim();
        if model.is_empty() {
            return Err("empty model name".into());
        }
        Ok(Self {
            model: model.to_string(),
            train_iter: int(1, "train_iter")?,
            episode_step: int(2, "episode_step")? as usize,
            edge_acc_full: float(3, "edge_acc_full")?,
            edge_acc_lower: float(4, "edge_acc_lower")?,
            recon_loss: float(5, "recon_loss")?,
            dec_loss: float(6, "dec_loss")?,
            seed: int(7, "seed")?,
        })
    }
}

/// Parses a metrics file; errors carry the 1-based line number.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricRow>> {
    let text = std::fs::read_to_string(path)?;
    let name = path.display().to_string();
    let err = |line: usize, msg: String| Error::Parse {
        path: name.clone(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == METRICS_HEADER => {}
        Some((_, h)) => return Err(err(1, format!("unexpected header `{h}`"))),
        None => return Err(err(1, "empty file".into())),
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        rows.push(MetricRow::parse(line).map_err(|m| err(idx + 1, m))?);
    }
    Ok(rows)
}

/// Appending CSV writer; the header is written only to a new or empty file.
pub struct MetricsWriter {
    out: BufWriter<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{METRICS_HEADER}")?;
        Ok(Self { out })
    }

    pub fn append(path: &Path) -> Result<Self> {
        let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let mut out = BufWriter::new(file);
        if fresh {
            writeln!(out, "{METRICS_HEADER}")?;
        }
        Ok(Self { out })
    }

    pub fn write(&mut self, row: &MetricRow) -> Result<()> {
        writeln!(self.out, "{}", row.to_csv())?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

/// Drops rows with `train_iter > iteration`; used when resuming from a
/// checkpoint older than the metrics file.
pub fn truncate_after(path: &Path, iteration: u64) -> Result<()> {
    let rows = read_metrics(path)?;
    let mut w = MetricsWriter::create(path)?;
    for row in rows.iter().filter(|r| r.train_iter <= iteration) {
        w.write(row)?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(step: usize) -> MetricRow {
        MetricRow {
            model: "crn".into(),
            train_iter: 500,
            episode_step: step,
            edge_acc_full: 0.84,
            edge_acc_lower: 0.6,
            recon_loss: 0.1 + 0.2,
            dec_loss: 1e-7,
            seed: 3,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let mut w = MetricsWriter::create(&path).unwrap();
        let rows = vec![row(0), row(1), row(2)];
        for r in &rows {
            w.write(r).unwrap();
        }
        w.flush().unwrap();
        drop(w);
        assert_eq!(read_metrics(&path).unwrap(), rows);
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), METRICS_HEADER);
    }

    #[test]
    fn malformed_line_number_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        let text = format!("{METRICS_HEADER}\n{}\ncrn,1,2,x,0,0,0,0\n", row(1).to_csv());
        std::fs::write(&path, text).unwrap();
        let msg = read_metrics(&path).unwrap_err().to_string();
        assert!(msg.contains("line 3"), "{msg}");
        assert!(msg.contains("edge_acc_full"), "{msg}");
    }

    #[test]
    fn wrong_header_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.csv");
        std::fs::write(&path, "model,iter\n").unwrap();
        assert!(read_metrics(&path).unwrap_err().to_string().contains("line 1"));
    }
}
