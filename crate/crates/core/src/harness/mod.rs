//! Training loop, evaluation protocol, metrics files, plots and checkpoints.

mod config;
mod metrics;
mod plot;
mod train;

pub use config::RunConfig;
pub use metrics::{read_metrics, truncate_after, MetricRow, MetricsWriter, METRICS_HEADER};
pub use plot::{emit_plot, stage_of, PlotOutputs, STAGES};
pub use train::{
    evaluate, load_checkpoint, resume_training, run_eval, run_training, save_checkpoint, Trainer, TrainingSummary,
    CHECKPOINT_PREFIX,
};

use crate::error::{Error, Result};

/// Fraction of matching entries over the full matrix and over the strictly
/// lower triangle. Both arguments are row-major `n×n` bit vectors.
pub fn edge_accuracy(pred: &[u8], truth: &[u8]) -> Result<(f64, f64)> {
    let n = (truth.len() as f64).sqrt().round() as usize;
    if pred.len() != truth.len() || n * n != truth.len() || n == 0 {
        return Err(Error::shape("edge_accuracy", &[pred.len()], &[truth.len()]));
    }
    let mut full = 0usize;
    let mut lower = 0usize;
    for i in 0..n {
        for j in 0..n {
            let hit = (pred[i * n + j] != 0) == (truth[i * n + j] != 0);
            full += hit as usize;
            if j < i {
                lower += hit as usize;
            }
        }
    }
    let lower_total = n * (n - 1) / 2;
    let lower_acc = if lower_total == 0 {
        1.0
    } else {
        lower as f64 / lower_total as f64
    };
    Ok((full as f64 / (n * n) as f64, lower_acc))
}

/// Per-step evaluation means over a set of held-out episodes.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeMetrics {
    pub model: crate::baselines::ModelKind,
    pub train_iter: u64,
    /// Index `t` holds step `t + 1`.
    pub edge_acc_full: Vec<f64>,
    pub edge_acc_lower: Vec<f64>,
    /// Reconstruction loss of the step's own sample; 0 for the baseline.
    pub recon_loss: Vec<f64>,
    /// BCE of the free-running decode against the true adjacency.
    pub dec_loss: Vec<f64>,
}

impl EpisodeMetrics {
    pub fn final_accuracy(&self) -> f64 {
        *self.edge_acc_full.last().expect("non-empty episode")
    }

    pub fn rows(&self, seed: u64) -> Vec<MetricRow> {
        (0..self.edge_acc_full.len())
            .map(|t| MetricRow {
                model: self.model.to_string(),
                train_iter: self.train_iter,
                episode_step: t + 1,
                edge_acc_full: self.edge_acc_full[t],
                edge_acc_lower: self.edge_acc_lower[t],
                recon_loss: self.recon_loss[t],
                dec_loss: self.dec_loss[t],
                seed,
            })
            .collect()
    }
}
