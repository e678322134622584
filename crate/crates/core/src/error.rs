use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("item {item} out of range (model has {items} items)")]
    ItemOutOfRange { item: usize, items: usize },

    #[error("item {0} is in the seen set")]
    ItemSeen(usize),

    #[error("simplex exceeded its iteration cap of {iterations}")]
    IterationLimit { iterations: usize, basis: Vec<usize> },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    /// True for failures of the numerical kernels rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::IterationLimit { .. } | Error::Numerical(_))
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
