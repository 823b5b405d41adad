use thiserror::Error;

#[derive(Debug, Error)]
pub enum PhononError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("root finding did not converge: {0}")]
    Convergence(String),
    #[error("non-finite value at p = {at}")]
    NonFinite { at: f64 },
    #[error("radicand does not vanish as declared at s = {at}")]
    SingularityMismatch { at: f64 },
    #[error("spectrum not positive: min value {min:e} below floor {floor:e}")]
    Positivity { min: f64, floor: f64 },
    #[error("grid with n = {n} cannot resolve eps^2 = {eps2:e} (need n >= {need})")]
    Resolution { n: usize, eps2: f64, need: usize },
    #[error("spectral check failed: {0}")]
    Spectral(String),
    #[error("power-law fit failed: {0}")]
    Fit(String),
    #[error("blow-up at t = {t}: {reason}")]
    Blowup { t: f64, reason: String },
    #[error("identity checks failed: {0}")]
    Verification(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PhononError {
    /// Validation-type failures map to exit code 2, everything numerical to 3.
    pub fn is_validation(&self) -> bool {
        matches!(self, PhononError::Invalid(_) | PhononError::Domain(_) | PhononError::Resolution { .. })
    }
}

pub type Result<T> = std::result::Result<T, PhononError>;
