use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A numeric parameter lies outside its admissible range.
    #[error("invalid `{name}` = {value}: must lie in {range}")]
    OutOfRange {
        name: &'static str,
        value: f64,
        range: String,
    },

    #[error("invalid model parameters: {0}")]
    InvalidParams(String),

    #[error("step size {delta} exceeds the admissible range (0, {delta_star}] (set a delta_star override to run coarser grids)")]
    StepTooLarge { delta: f64, delta_star: f64 },

    #[error("horizon {horizon} is not a positive integer multiple of the delay {tau}")]
    HorizonNotMultiple { horizon: f64, tau: f64 },

    #[error("factor {factor} does not divide {len}")]
    NotDivisible { factor: usize, len: usize },

    #[error("{what}: expected length {expected}, got {actual}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("index {index} outside [{lo}, {hi}]")]
    IndexOutOfRange { index: i64, lo: i64, hi: i64 },

    #[error("time {t} outside [{lo}, {hi}]")]
    TimeOutOfRange { t: f64, lo: f64, hi: f64 },

    #[error("non-finite {what} at x = {x:?}, y = {y:?}")]
    NonFinite {
        what: &'static str,
        x: Vec<f64>,
        y: Vec<f64>,
    },

    #[error("not enough usable rows for a rate fit: need 3, have {0}")]
    InsufficientRows(usize),

    #[error("invalid experiment plan: {0}")]
    InvalidPlan(String),
}

impl Error {
    pub(crate) fn out_of_range(name: &'static str, value: f64, range: impl Into<String>) -> Self {
        Error::OutOfRange {
            name,
            value,
            range: range.into(),
        }
    }
}
