use std::f64::consts::PI;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::filter::Biquad;
use crate::error::{check_non_negative, check_positive, invalid, Result};
use crate::series::TimeSeries;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct LockInConfig {
    pub mod_frequency: f64,
    /// Dither drive amplitude (PZT volts).
    pub mod_amplitude: f64,
    /// Reference phase, rad. `None` lets the loop pick the phase that
    /// maximises the in-phase error slope.
    #[serde(default)]
    pub demod_phase: Option<f64>,
    pub output_lpf_cutoff: f64,
}

impl LockInConfig {
    pub fn validate(&self) -> Result<()> {
        check_positive("lock_in.mod_frequency", self.mod_frequency)?;
        check_non_negative("lock_in.mod_amplitude", self.mod_amplitude)?;
        check_positive("lock_in.output_lpf_cutoff", self.output_lpf_cutoff)?;
        if let Some(p) = self.demod_phase {
            if !p.is_finite() {
                return Err(invalid("lock_in.demod_phase", "must be finite"));
            }
        }
        if !(self.output_lpf_cutoff < self.mod_frequency / 5.0) {
            return Err(invalid("lock_in.output_lpf_cutoff", "must be below mod_frequency/5"));
        }
        Ok(())
    }

    pub fn frequency_scaled(&self, factor: f64) -> Self {
        Self {
            mod_frequency: self.mod_frequency * factor,
            output_lpf_cutoff: self.output_lpf_cutoff * factor,
            ..*self
        }
    }
}

/// Streaming mixer + 2nd-order Butterworth output filter.
#[derive(Debug, Clone)]
pub struct LockIn {
    omega_dt: f64,
    phase0: f64,
    demod_phase: f64,
    n: u64,
    lpf: Biquad,
}

impl LockIn {
    /// `start_time` fixes the reference phase of the first sample.
    pub fn new(cfg: &LockInConfig, demod_phase: f64, sample_rate: f64, start_time: f64) -> Result<Self> {
        cfg.validate()?;
        check_positive("sample_rate", sample_rate)?;
        if !(cfg.mod_frequency < sample_rate / 2.0) {
            return Err(invalid("lock_in.mod_frequency", "must be below Nyquist"));
        }
        let phase0 = (2.0 * PI * cfg.mod_frequency * start_time).rem_euclid(2.0 * PI);
        Ok(Self {
            omega_dt: 2.0 * PI * cfg.mod_frequency / sample_rate,
            phase0,
            demod_phase,
            n: 0,
            lpf: Biquad::butterworth_lowpass(cfg.output_lpf_cutoff, sample_rate),
        })
    }

    #[inline]
    pub fn process(&mut self, x: f64) -> f64 {
        let r = 2.0 * (self.phase0 + self.omega_dt * self.n as f64 + self.demod_phase).sin();
        self.n += 1;
        self.lpf.process(x * r)
    }

    pub fn output_filter(&self) -> &Biquad {
        &self.lpf
    }
}

/// In-phase output; an unset demodulation phase is taken as 0.
pub fn lock_in_demodulate(series: &TimeSeries, cfg: &LockInConfig) -> Result<TimeSeries> {
    let mut li = LockIn::new(cfg, cfg.demod_phase.unwrap_or(0.0), series.sample_rate(), series.start_time())?;
    let out = series.samples().iter().map(|&x| li.process(x)).collect();
    TimeSeries::new(series.sample_rate(), series.start_time(), out)
}
