//! Sub-threshold OPO squeezed-vacuum simulator: analytic quadrature spectra,
//! a time-domain stochastic engine, homodyne / Stokes detection, instrument
//! emulation and a quantum-noise-locking servo.

pub mod detection;
pub mod dsp;
pub mod error;
pub mod exec;
pub mod noise_lock;
pub mod opo;
pub mod scenario;
mod serde_ext;
pub mod series;
pub mod spectrum;
pub mod stochastic;

pub use error::{Error, Result};
pub use exec::Execution;
pub use series::TimeSeries;
pub use spectrum::{fmt_db, Spectrum, SpectrumUnit};
