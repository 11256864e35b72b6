use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input outside the domain of an operation (bad sizes, sites, ranges).
    #[error("domain error: {0}")]
    Domain(String),

    /// Parameters that are individually valid but cannot be run as given.
    #[error("configuration error: {0}")]
    Config(String),

    /// A shadow-based second moment came out non-positive, so the logarithm
    /// in the asymmetry estimator is undefined. Both raw U-statistics are kept
    /// so the caller can decide how to treat the point.
    #[error("estimate undefined: purity U-statistic {purity}, symmetrized {symmetrized}")]
    EstimateUndefined { purity: f64, symmetrized: f64 },

    /// The normalizing denominator of the Frobenius-distance estimator was
    /// non-positive.
    #[error("distance estimate undefined: denominator {denominator}")]
    DistanceUndefined { denominator: f64 },

    /// Malformed line in a data file. `line` is 1-based.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }
}
