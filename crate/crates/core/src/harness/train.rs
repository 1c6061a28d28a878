//! Meta-training, evaluation and checkpoint persistence.

use std::path::{Path, PathBuf};

use crate::baselines::build_model;
use crate::error::{Error, Result};
use crate::harness::metrics::{truncate_after, MetricRow, MetricsWriter};
use crate::harness::{edge_accuracy, EpisodeMetrics, RunConfig};
use crate::model::{IterationMetrics, Model};
use crate::nn::{AdamState, Checkpoint, Entry, Graph, Scalar};
use crate::scm::{stream_rng, Episode};

/// Name prefix of model parameters inside a checkpoint.
pub const CHECKPOINT_PREFIX: &str = "crn/";

const TRAIN_STREAM: u64 = 0;
const EVAL_STREAM: u64 = 1;
const INIT_STREAM: u64 = 2;
/// Episodes per evaluation graph; bounds memory, does not affect results.
const EVAL_CHUNK: usize = 25;

pub struct Trainer {
    pub config: RunConfig,
    pub model: Model<f32>,
    pub adam: AdamState<f32>,
    /// Completed iterations.
    pub iteration: u64,
}

#[derive(Clone, Debug)]
pub struct TrainingSummary {
    pub iterations: u64,
    pub metrics_path: PathBuf,
    pub checkpoint_path: PathBuf,
    pub final_eval: Option<EpisodeMetrics>,
}

impl Trainer {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = stream_rng(config.seed, INIT_STREAM, 0);
        let model = build_model(config.model, &config.model_config(), &mut rng)?;
        let adam = AdamState::new(&model.store);
        Ok(Self {
            config,
            model,
            adam,
            iteration: 0,
        })
    }

    /// The batch for the next iteration: training episode `e = iteration ·
    /// batch + b` comes from stream `(seed, 0, e)`.
    pub fn next_batch(&self) -> Result<Vec<Episode>> {
        let spec = self.config.episode_spec();
        let batch = self.config.batch as u64;
        (0..batch)
            .map(|b| spec.generate_indexed(self.config.seed, TRAIN_STREAM, self.iteration * batch + b))
            .collect()
    }

    pub fn step(&mut self) -> Result<IterationMetrics> {
        let episodes = self.next_batch()?;
        let refs: Vec<&Episode> = episodes.iter().collect();
        let adam_cfg = self.config.adam();
        let m = self.model.train_iteration(&refs, &mut self.adam, &adam_cfg)?;
        self.iteration += 1;
        if !m.loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                iteration: self.iteration,
                recon: m.recon_loss,
                decoder: m.dec_loss,
            });
        }
        Ok(m)
    }

    pub fn training_row(&self, m: &IterationMetrics) -> MetricRow {
        MetricRow {
            model: self.config.model.to_string(),
            train_iter: self.iteration,
            episode_step: 0,
            edge_acc_full: m.tf_acc_full,
            edge_acc_lower: m.tf_acc_lower,
            recon_loss: m.recon_loss,
            dec_loss: m.dec_loss,
            seed: self.config.seed,
        }
    }

    pub fn evaluate(&self) -> Result<EpisodeMetrics> {
        evaluate(&self.model, &self.config, self.iteration)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.push("config", Entry::Text(self.config.to_text()));
        ck.push("rng/seed", Entry::U64(vec![self.config.seed]));
        ck.push("rng/iteration", Entry::U64(vec![self.iteration]));
        ck.push_params(CHECKPOINT_PREFIX, &self.model.store);
        ck.push_adam(&self.model.store, &self.adam);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config = RunConfig::parse(ck.text("config")?, "checkpoint config")?;
        let mut trainer = Trainer::new(config)?;
        ck.load_params(CHECKPOINT_PREFIX, &mut trainer.model.store)?;
        trainer.adam = ck.load_adam(&trainer.model.store)?;
        let first = |key: &str| -> Result<u64> {
            ck.u64s(key)?
                .first()
                .copied()
                .ok_or_else(|| Error::Checkpoint(format!("empty `{key}`")))
        };
        if first("rng/seed")? != trainer.config.seed {
            return Err(Error::Checkpoint("stored seed disagrees with stored config".into()));
        }
        trainer.iteration = first("rng/iteration")?;
        Ok(trainer)
    }

    /// Trains up to `config.iterations`, appending metrics and writing
    /// checkpoints into `config.output_dir`.
    fn run(
        &mut self,
        metrics: &mut MetricsWriter,
        observer: &mut dyn FnMut(&Trainer, &IterationMetrics, Option<&EpisodeMetrics>),
    ) -> Result<TrainingSummary> {
        let dir = self.config.output_dir.clone();
        let mut final_eval = None;
        while self.iteration < self.config.iterations {
            let m = self.step()?;
            metrics.write(&self.training_row(&m))?;
            let eval = if self.iteration % self.config.eval_every == 0 {
                let e = self.evaluate()?;
                for row in e.rows(self.config.seed) {
                    metrics.write(&row)?;
                }
                Some(e)
            } else {
                None
            };
            observer(self, &m, eval.as_ref());
            if eval.is_some() {
                final_eval = eval;
            }
            if self.iteration % self.config.checkpoint_every == 0 {
                metrics.flush()?;
                save_checkpoint(self, &dir.join(format!("checkpoint_{:06}.ckpt", self.iteration)))?;
            }
        }
        metrics.flush()?;
        let checkpoint_path = dir.join("final.ckpt");
        save_checkpoint(self, &checkpoint_path)?;
        Ok(TrainingSummary {
            iterations: self.iteration,
            metrics_path: dir.join("metrics.csv"),
            checkpoint_path,
            final_eval,
        })
    }
}

fn prepare_dir(config: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&config.output_dir)?;
    std::fs::write(config.output_dir.join("config.txt"), config.to_text())?;
    Ok(())
}

/// Fresh training run. `observer` sees every iteration (and the evaluation
/// block, when one ran).
pub fn run_training(
    config: &RunConfig,
    observer: &mut dyn FnMut(&Trainer, &IterationMetrics, Option<&EpisodeMetrics>),
) -> Result<TrainingSummary> {
    let mut trainer = Trainer::new(config.clone())?;
    prepare_dir(config)?;
    let mut metrics = MetricsWriter::create(&config.output_dir.join("metrics.csv"))?;
    trainer.run(&mut metrics, observer)
}

/// Continues a run from a checkpoint. Metrics rows newer than the
/// checkpoint are dropped before appending. `iterations` overrides the
/// stored total.
pub fn resume_training(
    checkpoint: &Path,
    iterations: Option<u64>,
    observer: &mut dyn FnMut(&Trainer, &IterationMetrics, Option<&EpisodeMetrics>),
) -> Result<TrainingSummary> {
    let (mut trainer, _) = load_checkpoint(checkpoint)?;
    if let Some(total) = iterations {
        trainer.config.iterations = total;
    }
    prepare_dir(&trainer.config)?;
    let path = trainer.config.output_dir.join("metrics.csv");
    if path.exists() {
        truncate_after(&path, trainer.iteration)?;
    }
    let mut metrics = MetricsWriter::append(&path)?;
    trainer.run(&mut metrics, observer)
}

pub fn save_checkpoint(trainer: &Trainer, path: &Path) -> Result<()> {
    trainer.checkpoint().save(path)
}

/// Returns the restored trainer and the raw container.
pub fn load_checkpoint(path: &Path) -> Result<(Trainer, Checkpoint)> {
    let ck = Checkpoint::load(path)?;
    Ok((Trainer::from_checkpoint(&ck)?, ck))
}

/// Evaluates a stored model. With `config`, its architecture must match the
/// checkpoint and its seed and `eval_episodes` are used.
pub fn run_eval(checkpoint: &Path, config: Option<&RunConfig>) -> Result<EpisodeMetrics> {
    let (trainer, _) = load_checkpoint(checkpoint)?;
    let cfg = match config {
        Some(c) => {
            c.check_compatible(&trainer.config)?;
            c.clone()
        }
        None => trainer.config.clone(),
    };
    evaluate(&trainer.model, &cfg, trainer.iteration)
}

/// Free-running decode after every step of `config.eval_episodes` held-out
/// episodes from stream `(seed, 1, e)`; returns per-step means.
pub fn evaluate<T: Scalar>(model: &Model<T>, config: &RunConfig, train_iter: u64) -> Result<EpisodeMetrics> {
    let n = config.n;
    let k = config.k;
    if model.config.n != n || model.config.k != k {
        return Err(Error::ConfigMismatch(format!(
            "model built for n = {}, k = {} evaluated with n = {n}, k = {k}",
            model.config.n, model.config.k
        )));
    }
    let spec = config.episode_spec();
    let mut sums = [vec![0.0; k], vec![0.0; k], vec![0.0; k], vec![0.0; k]];
    let mut start = 0;
    while start < config.eval_episodes {
        let end = (start + EVAL_CHUNK).min(config.eval_episodes);
        let episodes: Vec<Episode> = (start..end)
            .map(|e| spec.generate_indexed(config.seed, EVAL_STREAM, e as u64))
            .collect::<Result<_>>()?;
        let refs: Vec<&Episode> = episodes.iter().collect();
        let mut g = Graph::new();
        let enc = model.encode(&mut g, &refs)?;
        let cond = g.value(enc.cond).clone();
        let pred = enc.pred_logits.map(|v| g.value(v).to_f64());
        drop(g);
        let decoded = model.decode_free_running(&cond)?;
        for (e, ep) in episodes.iter().enumerate() {
            let truth = ep.adjacency();
            for t in 0..k {
                let row = e * k + t;
                let d = &decoded[row];
                let (full, lower) = edge_accuracy(&d.bits, &truth)?;
                sums[0][t] += full;
                sums[1][t] += lower;
                let dec: f64 = d
                    .logits
                    .iter()
                    .zip(&truth)
                    .map(|(&z, &b)| crate::nn::bce_term(z, b as f64))
                    .sum();
                sums[3][t] += dec / (n * n) as f64;
                if let Some(p) = &pred {
                    let s = &ep.samples[t];
                    let recon: f64 = (0..n)
                        .filter(|&i| i != s.target)
                        .map(|i| crate::nn::bce_term(p[row * n + i], s.values[i] as f64))
                        .sum();
                    sums[2][t] += recon / (n - 1) as f64;
                }
            }
        }
        start = end;
    }
    let count = config.eval_episodes as f64;
    let [full, lower, recon, dec] = sums.map(|v| v.into_iter().map(|x| x / count).collect::<Vec<_>>());
    Ok(EpisodeMetrics {
        model: model.kind,
        train_iter,
        edge_acc_full: full,
        edge_acc_lower: lower,
        recon_loss: recon,
        dec_loss: dec,
    })
}
