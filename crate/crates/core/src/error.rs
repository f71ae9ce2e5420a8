use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("malformed input at {position}: {reason}")]
    Malformed { position: String, reason: String },

    #[error("timestamp regression at record {index}: {previous} -> {current}")]
    TimestampRegression {
        index: usize,
        previous: u64,
        current: u64,
    },

    #[error("no schedule entry for trial {0}")]
    MissingSchedule(usize),

    #[error("zero trials for setting pair {0}")]
    ZeroTrials(&'static str),

    #[error("zero denominator in {0}")]
    ZeroDenominator(&'static str),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("counts overflow")]
    Overflow,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(field: &str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        field: field.to_string(),
        reason: reason.into(),
    }
}

pub(crate) fn check_probability(field: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(invalid(
            field,
            format!("{p} is not a probability in [0, 1]"),
        ));
    }
    Ok(())
}
