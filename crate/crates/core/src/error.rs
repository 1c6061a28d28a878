use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),

    #[error("enumeration too large: n = {0} exceeds the limit of 4")]
    EnumerationTooLarge(usize),

    #[error("empty world enumeration")]
    EmptyEnumeration,

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("checkpoint does not match configuration: {0}")]
    ConfigMismatch(String),

    #[error("non-finite loss at iteration {iteration} (recon {recon}, decoder {decoder})")]
    NonFiniteLoss {
        iteration: u64,
        recon: f64,
        decoder: f64,
    },

    #[error("{path}: line {line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("gradient check failed (max relative error {max_rel_err:e}) for: {params:?}")]
    GradCheck { max_rel_err: f64, params: Vec<String> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("plot rendering failed: {0}")]
    Plot(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
