use thiserror::Error;

/// Errors raised by the simulation and analysis layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("at or above threshold: parametric gain {gain:.6e} rad/s >= total decay {kappa_a:.6e} rad/s")]
    AboveThreshold { gain: f64, kappa_a: f64 },

    #[error("sample rate {sample_rate:.6e} Hz violates the resolution guard (needs > {required:.6e} Hz)")]
    SampleRateGuard { sample_rate: f64, required: f64 },

    #[error("unreachable anti-squeezing: {target_db:.3} dB cannot be produced for gain in (0, {max_ratio:.3}·kappa_a) at efficiency {eta:.4}")]
    UnreachableAntiSqueezing { target_db: f64, eta: f64, max_ratio: f64 },

    #[error("LO power {power:.3e} W exceeds the detector saturation power {saturation:.3e} W (the homodyne detector saturates in the 2 mW class)")]
    Saturation { power: f64, saturation: f64 },

    #[error("dark-noise subtraction yields a negative variance ({value:.4e})")]
    OverSubtraction { value: f64 },

    #[error("series too short: {len} samples, need at least {required}")]
    SeriesTooShort { len: usize, required: usize },

    #[error("mismatched sample rates: {a} Hz vs {b} Hz")]
    MismatchedSampleRate { a: f64, b: f64 },

    #[error("non-positive value {0} has no dB representation")]
    NonPositive(f64),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

/// Reject non-finite or out-of-range fractions.
pub(crate) fn check_fraction_open(name: &'static str, v: f64) -> Result<()> {
    if !(v.is_finite() && (0.0..1.0).contains(&v)) {
        return Err(invalid(name, format!("{v} is not in [0, 1)")));
    }
    Ok(())
}

pub(crate) fn check_positive(name: &'static str, v: f64) -> Result<()> {
    if !(v.is_finite() && v > 0.0) {
        return Err(invalid(name, format!("{v} must be finite and > 0")));
    }
    Ok(())
}

pub(crate) fn check_non_negative(name: &'static str, v: f64) -> Result<()> {
    if !(v.is_finite() && v >= 0.0) {
        return Err(invalid(name, format!("{v} must be finite and >= 0")));
    }
    Ok(())
}
