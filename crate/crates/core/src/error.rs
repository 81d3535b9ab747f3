use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("numeric fault: {0}")]
    NumericFault(String),

    #[error("numeric fault at step {step}: {detail}")]
    NumericFaultAt { step: u64, detail: String },

    #[error("frequency out of range: omega*T = {omega_t} is not in (0, pi)")]
    FrequencyOutOfRange { omega_t: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("singular rotation block: magnitude {magnitude} below limit {limit}")]
    Singular { magnitude: f64, limit: f64 },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("insufficient data: need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("window does not cover an integer number of periods: {0}")]
    Window(String),

    #[error("configuration parse error: {0}")]
    ConfigParse(String),

    #[error("configuration rejected:\n{}", .0.iter().map(|v| format!("  - {v}")).collect::<Vec<_>>().join("\n"))]
    ConfigInvalid(Vec<String>),

    #[error("malformed trace: {0}")]
    Trace(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn is_numeric_fault(&self) -> bool {
        matches!(self, Error::NumericFault(_) | Error::NumericFaultAt { .. })
    }
}

pub(crate) fn ensure_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericFault(format!("non-finite value in {what}")))
    }
}
