use thiserror::Error;

/// Errors produced by the simulator and estimators.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate Markov chain (p01 = {p01}, p11 = {p11}): stationary distribution is not unique")]
    DegenerateChain { p01: f64, p11: f64 },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("side information is NaN or contradicts the activity prior")]
    InvalidSideInfo,

    #[error("degenerate prior: every pattern with an active target frame has zero probability")]
    DegeneratePrior,

    #[error("all joint pattern weights vanished")]
    VanishingPosterior,

    #[error("non-finite value encountered at AMP iteration {iteration}")]
    NonFinite { iteration: usize },

    #[error("frame {frame}: {source}")]
    Frame {
        frame: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("calibration bounds do not bracket MDR = FAR: at {lo} MDR={mdr_lo}, FAR={far_lo}; at {hi} MDR={mdr_hi}, FAR={far_hi}")]
    NotBracketing {
        lo: f64,
        hi: f64,
        mdr_lo: f64,
        far_lo: f64,
        mdr_hi: f64,
        far_hi: f64,
    },

    #[error("detector response is not monotone in the base threshold near {threshold}")]
    NonMonotone { threshold: f64 },

    #[error("trial with seed {seed:#x} failed: {source}")]
    Trial {
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn dims(context: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::DimensionMismatch {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
