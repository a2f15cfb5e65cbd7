use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{field}: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("saturation parameter must be positive, got {0}")]
    NonPositiveSaturation(f64),

    #[error("sub-natural linewidth: measured FWHM {fwhm} rad/s is below the natural width 2*gamma2 = {natural} rad/s")]
    SubNaturalLinewidth { fwhm: f64, natural: f64 },

    #[error("fluorescence SNR undefined for zero dark counts")]
    ZeroDarkCounts,

    #[error("extinction dip undefined: alpha*zeta = {0} must be below 1")]
    DipPrefactor(f64),

    #[error("cannot accumulate an empty list of spectra")]
    EmptyAccumulation,

    #[error("spectra do not share a detuning grid ({0})")]
    GridMismatch(String),

    #[error("need at least {required} pixels to fit, got {found}")]
    TooFewPixels { found: usize, required: usize },

    #[error("only {found} off-resonant pixels (need {required}); widen the scan")]
    TooFewOffResonantPixels { found: usize, required: usize },

    #[error("fit did not converge after {0} iterations")]
    NotConverged(usize),

    #[error("malformed spectrum file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
