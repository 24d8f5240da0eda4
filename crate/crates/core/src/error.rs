use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    /// A tape primitive produced NaN or infinity. `row` is the leading-axis
    /// index of the first offending element.
    #[error("non-finite value produced by {op} (row {row})")]
    NonFinite { op: &'static str, row: usize },

    #[error("path simulation diverged at step {step}, sample {sample}")]
    SimulationDivergence { step: usize, sample: usize },

    #[error("rollout diverged at step {step}, sample {sample}")]
    RolloutDivergence { step: usize, sample: usize },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
