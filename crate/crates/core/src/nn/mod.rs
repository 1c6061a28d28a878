//! Minimal differentiable-compute layer: rank-2 tensors, a reverse-mode tape,
//! the layers the models need, Adam and a binary checkpoint container.

mod adam;
mod checkpoint;
mod gradcheck;
mod graph;
mod layers;
mod params;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, Entry, MAGIC};
pub use gradcheck::{grad_check, relative_error, GradCheckReport, ParamCheck, FD_STEP, ZERO_GRAD_FLOOR};
pub(crate) use graph::bce_term;
pub use graph::{Gradients, Graph, Var};
pub use layers::{linear, lstm_cell, BoundLinear, BoundLstm, BoundMlp, Linear, LstmCell, Mlp, FORGET_BIAS_INIT};
pub use params::{Param, ParamId, ParamStore};
pub use tensor::{Scalar, Tensor};
