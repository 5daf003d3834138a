use alloc::string::String;

/// Errors produced by the algorithmic core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("trace split failed: {0}")]
    Split(String),
    #[error("history window has {got} records, need {need}")]
    Window { got: usize, need: usize },
    #[error("value {value} out of range: {what}")]
    Range { what: &'static str, value: i64 },
    #[error("token dictionary capacity {0} exceeded")]
    Capacity(usize),
    #[error("non-finite value in {0}")]
    Numeric(String),
    #[error("training diverged at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
}

pub type Result<T> = core::result::Result<T, Error>;
