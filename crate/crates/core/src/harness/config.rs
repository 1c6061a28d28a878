//! Run configuration: a flat `key = value` file.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::baselines::ModelKind;
use crate::error::{Error, Result};
use crate::model::CrnConfig;
use crate::nn::AdamConfig;
use crate::scm::{EpisodeSpec, DEFAULT_BETA, DEFAULT_EPISODE_LEN, DEFAULT_NODES, DEFAULT_P_EDGE};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub n: usize,
    pub k: usize,
    pub batch: usize,
    pub iterations: u64,
    pub lr: f64,
    pub p_edge: f64,
    pub beta: f64,
    pub eval_every: u64,
    pub eval_episodes: usize,
    pub seed: u64,
    pub model: ModelKind,
    pub permute_labels: bool,
    pub decoder_train_stride: usize,
    pub checkpoint_every: u64,
    pub output_dir: PathBuf,
    /// Architecture widths; `n`, `k`, the variant flags and the stride are
    /// overwritten from the fields above by [`RunConfig::model_config`].
    pub arch: CrnConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n: DEFAULT_NODES,
            k: DEFAULT_EPISODE_LEN,
            batch: 8,
            iterations: 20_000,
            lr: 2e-4,
            p_edge: DEFAULT_P_EDGE,
            beta: DEFAULT_BETA,
            eval_every: 500,
            eval_episodes: 50,
            seed: 0,
            model: ModelKind::Crn,
            permute_labels: false,
            decoder_train_stride: 1,
            checkpoint_every: 5000,
            output_dir: PathBuf::from("runs/default"),
            arch: CrnConfig::default(),
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("invalid value `{value}` for `{key}`"))
}

fn parse_bool(key: &str, value: &str) -> std::result::Result<bool, String> {
    match value {
        "on" | "true" | "1" => Ok(true),
        "off" | "false" | "0" => Ok(false),
        _ => Err(format!("invalid value `{value}` for `{key}` (expected on/off)")),
    }
}

impl RunConfig {
    /// Parses config text; `path` only labels error messages.
    pub fn parse(text: &str, path: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse {
                path: path.to_string(),
                line: idx + 1,
                msg,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            cfg.set(key.trim(), value.trim()).map_err(err)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Sets one key; unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        match key {
            "n" => self.n = parse_value(key, value)?,
            "k" => self.k = parse_value(key, value)?,
            "batch" => self.batch = parse_value(key, value)?,
            "iterations" => self.iterations = parse_value(key, value)?,
            "lr" => self.lr = parse_value(key, value)?,
            "p_edge" => self.p_edge = parse_value(key, value)?,
            "beta" => self.beta = parse_value(key, value)?,
            "eval_every" => self.eval_every = parse_value(key, value)?,
            "eval_episodes" => self.eval_episodes = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "model" => self.model = value.parse().map_err(|e: Error| e.to_string())?,
            "permute_labels" => self.permute_labels = parse_bool(key, value)?,
            "decoder_train_stride" => self.decoder_train_stride = parse_value(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse_value(key, value)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            "enc_hidden1" => self.arch.enc_hidden.0 = parse_value(key, value)?,
            "enc_hidden2" => self.arch.enc_hidden.1 = parse_value(key, value)?,
            "edge_feat_dim" => self.arch.edge_feat_dim = parse_value(key, value)?,
            "belief_dim" => self.arch.belief_dim = parse_value(key, value)?,
            "dec_hidden" => self.arch.dec_hidden = parse_value(key, value)?,
            "attn_hidden" => self.arch.attn_hidden = parse_value(key, value)?,
            "pred_hidden" => self.arch.pred_hidden = parse_value(key, value)?,
            "proj_hidden" => self.arch.proj_hidden = parse_value(key, value)?,
            "bit_embed_dim" => self.arch.bit_embed_dim = parse_value(key, value)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("k", self.k as u64),
            ("batch", self.batch as u64),
            ("iterations", self.iterations),
            ("eval_every", self.eval_every),
            ("eval_episodes", self.eval_episodes as u64),
            ("checkpoint_every", self.checkpoint_every),
        ];
        if let Some((key, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidConfig(format!("`{key}` must be positive")));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0..=1.0).contains(&self.p_edge) {
            return Err(Error::InvalidConfig(format!("p_edge must lie in [0, 1], got {}", self.p_edge)));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidConfig(format!("beta must be positive, got {}", self.beta)));
        }
        self.model_config().validate()
    }

    pub fn model_config(&self) -> CrnConfig {
        CrnConfig {
            n: self.n,
            k: self.k,
            decoder_train_stride: self.decoder_train_stride,
            ..self.arch.clone()
        }
    }

    pub fn episode_spec(&self) -> EpisodeSpec {
        EpisodeSpec {
            n: self.n,
            k: self.k,
            p_edge: self.p_edge,
            beta: self.beta,
            permute_labels: self.permute_labels,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }

    /// Canonical text form; [`RunConfig::parse`] reads it back unchanged.
    pub fn to_text(&self) -> String {
        let a = &self.arch;
        let onoff = |b: bool| if b { "on" } else { "off" };
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        kv("n", self.n.to_string());
        kv("k", self.k.to_string());
        kv("batch", self.batch.to_string());
        kv("iterations", self.iterations.to_string());
        kv("lr", self.lr.to_string());
        kv("p_edge", self.p_edge.to_string());
        kv("beta", self.beta.to_string());
        kv("eval_every", self.eval_every.to_string());
        kv("eval_episodes", self.eval_episodes.to_string());
        kv("seed", self.seed.to_string());
        kv("model", self.model.to_string());
        kv("permute_labels", onoff(self.permute_labels).to_string());
        kv("decoder_train_stride", self.decoder_train_stride.to_string());
        kv("checkpoint_every", self.checkpoint_every.to_string());
        kv("output_dir", self.output_dir.display().to_string());
        kv("enc_hidden1", a.enc_hidden.0.to_string());
        kv("enc_hidden2", a.enc_hidden.1.to_string());
        kv("edge_feat_dim", a.edge_feat_dim.to_string());
        kv("belief_dim", a.belief_dim.to_string());
        kv("dec_hidden", a.dec_hidden.to_string());
        kv("attn_hidden", a.attn_hidden.to_string());
        kv("pred_hidden", a.pred_hidden.to_string());
        kv("proj_hidden", a.proj_hidden.to_string());
        kv("bit_embed_dim", a.bit_embed_dim.to_string());
        s
    }

    /// Errors if a checkpoint written under `other` cannot be used with
    /// this configuration.
    pub fn check_compatible(&self, other: &RunConfig) -> Result<()> {
        let mine = self.model_config();
        let theirs = other.model_config();
        let checks = [
            ("n", mine.n, theirs.n),
            ("enc_hidden1", mine.enc_hidden.0, theirs.enc_hidden.0),
            ("enc_hidden2", mine.enc_hidden.1, theirs.enc_hidden.1),
            ("edge_feat_dim", mine.edge_feat_dim, theirs.edge_feat_dim),
            ("belief_dim", mine.belief_dim, theirs.belief_dim),
            ("dec_hidden", mine.dec_hidden, theirs.dec_hidden),
            ("attn_hidden", mine.attn_hidden, theirs.attn_hidden),
            ("pred_hidden", mine.pred_hidden, theirs.pred_hidden),
            ("proj_hidden", mine.proj_hidden, theirs.proj_hidden),
            ("bit_embed_dim", mine.bit_embed_dim, theirs.bit_embed_dim),
        ];
        for (key, a, b) in checks {
            if a != b {
                return Err(Error::ConfigMismatch(format!("{key}: checkpoint has {b}, configuration has {a}")));
            }
        }
        if self.model != other.model {
            return Err(Error::ConfigMismatch(format!(
                "model: checkpoint has {}, configuration has {}",
                other.model, self.model
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_published_hyperparameters() {
        let c = RunConfig::default();
        assert_eq!((c.n, c.k, c.batch, c.iterations), (5, 100, 8, 20_000));
        assert_eq!((c.lr, c.eval_every, c.eval_episodes), (2e-4, 500, 50));
    }

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.seed = 17;
        c.model = ModelKind::Lstm;
        c.permute_labels = true;
        c.arch.belief_dim = 12;
        let back = RunConfig::parse(&c.to_text(), "mem").unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_key_reports_line() {
        let err = RunConfig::parse("n = 4\n\nlearning_rate = 0.1\n", "cfg.txt").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("cfg.txt: line 3"), "{msg}");
        assert!(msg.contains("learning_rate"), "{msg}");
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::parse("lr = 0", "c").is_err());
        assert!(RunConfig::parse("batch = 0", "c").is_err());
        assert!(RunConfig::parse("model = gru", "c").is_err());
        assert!(RunConfig::parse("n = five", "c").is_err());
        assert!(RunConfig::parse("just words", "c").is_err());
    }

    #[test]
    fn comments_and_blank_lines_ignored() {
        let c = RunConfig::parse("# run\nseed = 3 # trailing\n\n", "c").unwrap();
        assert_eq!(c.seed, 3);
    }
}
