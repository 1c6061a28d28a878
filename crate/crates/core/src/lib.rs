pub mod baselines;
pub mod dump;
pub mod error;
pub mod harness;
pub mod model;
pub mod nn;
pub mod oracle;
pub mod scm;

pub use error::{Error, Result};
