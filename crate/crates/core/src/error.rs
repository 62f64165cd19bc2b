use thiserror::Error;

use crate::atom::{Level, Polarization};

#[derive(Debug, Error)]
pub enum Error {
    #[error("forbidden transition {upper} -> {lower} with {q} polarization")]
    ForbiddenTransition {
        upper: Level,
        lower: Level,
        q: Polarization,
    },

    #[error("dimension overflow: {dim} exceeds bound {bound}")]
    DimensionOverflow { dim: usize, bound: usize },

    #[error("frame inconsistency: {0}")]
    FrameInconsistency(String),

    #[error("integrator failure at t = {t} µs: {reason}")]
    IntegratorFailure { t: f64, reason: String },

    #[error("positivity violation at t = {t} µs: min eigenvalue {min_eigenvalue:e}")]
    PositivityViolation { t: f64, min_eigenvalue: f64 },

    #[error("invariant violation: {0}")]
    InvariantViolation(String),

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("range exceeds grid support: |tau| up to {range} µs, support {support} µs")]
    RangeExceedsSupport { range: f64, support: f64 },

    #[error("zero denominator in {0}")]
    ZeroDenominator(&'static str),

    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },

    #[error("unknown channel {channel} at line {line}")]
    UnknownChannel { channel: u32, line: usize },

    #[error("no phase reference: stream has no sync events and no cycle period")]
    NoPhaseReference,

    #[error("invalid density: {0}")]
    InvalidDensity(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by bad user input rather than numerics.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter { .. }
                | Error::Config(_)
                | Error::FrameInconsistency(_)
                | Error::DimensionOverflow { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
