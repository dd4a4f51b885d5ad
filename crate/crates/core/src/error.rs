use chrono::NaiveDate;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty series")]
    EmptySeries,

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("nothing to interpolate from: series `{0}` has no valid values")]
    NothingToInterpolate(String),

    #[error("series `{firm_id}` does not cover {from}..={to}")]
    CoverageGap {
        firm_id: String,
        from: NaiveDate,
        to: NaiveDate,
    },

    #[error("series `{firm_id}` is not contiguous at {date}")]
    NonContiguous { firm_id: String, date: NaiveDate },

    #[error("negative consumption {value} for `{firm_id}` on {date}")]
    NegativeValue {
        firm_id: String,
        date: NaiveDate,
        value: f64,
    },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("filter degeneracy at offset {0}")]
    FilterDegeneracy(usize),

    #[error("non-finite log-likelihood at EM iteration {0}")]
    NonFiniteLoglik(usize),

    #[error("no consuming firms at offset {0}")]
    NoConsumingFirms(i32),

    #[error("unknown {kind} code `{code}`")]
    UnknownCode { kind: &'static str, code: String },

    #[error("empty panel")]
    EmptyPanel,

    #[error("unknown firm `{0}`")]
    UnknownFirm(String),

    #[error("missing input file {0}")]
    MissingFile(String),

    #[error("config: {0}")]
    Config(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
