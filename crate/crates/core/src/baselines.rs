//! Comparison models sharing the CRN training and evaluation interface.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{CrnConfig, Model};
use crate::nn::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelKind {
    Crn,
    CrnSupervised,
    CrnZeroBelief,
    Lstm,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::Crn,
        ModelKind::CrnSupervised,
        ModelKind::CrnZeroBelief,
        ModelKind::Lstm,
    ];

    /// Name used on the command line and in metrics files.
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Crn => "crn",
            ModelKind::CrnSupervised => "crn-supervised",
            ModelKind::CrnZeroBelief => "zero-belief",
            ModelKind::Lstm => "lstm",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown model kind `{s}` (crn, crn-supervised, zero-belief, lstm)")))
    }
}

pub fn build_model<T: Scalar>(kind: ModelKind, config: &CrnConfig, rng: &mut impl Rng) -> Result<Model<T>> {
    Model::new(kind, config.clone(), rng)
}

pub fn build_crn<T: Scalar>(config: &CrnConfig, rng: &mut impl Rng) -> Result<Model<T>> {
    build_model(ModelKind::Crn, config, rng)
}

/// Monolithic MLP encoder over `values ⊕ one-hot(target)` feeding an LSTM;
/// the decoder loss trains everything and there is no reconstruction loss.
pub fn build_lstm_baseline<T: Scalar>(config: &CrnConfig, rng: &mut impl Rng) -> Result<Model<T>> {
    build_model(ModelKind::Lstm, config, rng)
}

/// CRN whose decoder is conditioned on the zero vector.
pub fn build_zero_belief<T: Scalar>(config: &CrnConfig, rng: &mut impl Rng) -> Result<Model<T>> {
    build_model(ModelKind::CrnZeroBelief, config, rng)
}

/// CRN without the stop-gradient between belief and decoder.
pub fn build_supervised_crn<T: Scalar>(config: &CrnConfig, rng: &mut impl Rng) -> Result<Model<T>> {
    build_model(ModelKind::CrnSupervised, config, rng)
}
