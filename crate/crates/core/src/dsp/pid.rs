use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{check_non_negative, invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct PidConfig {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub output_limits: (f64, f64),
    /// +1 or −1; flips which extremum the loop settles on.
    pub sign: f64,
}

impl PidConfig {
    pub fn validate(&self) -> Result<()> {
        check_non_negative("pid.kp", self.kp)?;
        check_non_negative("pid.ki", self.ki)?;
        check_non_negative("pid.kd", self.kd)?;
        let (lo, hi) = self.output_limits;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(invalid("pid.output_limits", format!("({lo}, {hi}) must be finite and ordered")));
        }
        if self.sign != 1.0 && self.sign != -1.0 {
            return Err(invalid("pid.sign", "must be +1 or -1"));
        }
        Ok(())
    }

    pub fn with_sign(self, sign: f64) -> Self {
        Self { sign, ..self }
    }

    /// Integral gain is a rate, so it follows the time axis under frequency
    /// scaling.
    pub fn frequency_scaled(&self, factor: f64) -> Self {
        Self { ki: self.ki * factor, kd: self.kd / factor, ..*self }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PidState {
    pub integral: f64,
    pub prev_error: Option<f64>,
    pub output: f64,
    pub saturated: bool,
}

/// One parallel-form update. Conditional integration: the integrator only
/// advances if doing so does not push a saturated output further out.
pub fn pid_step(state: PidState, error: f64, dt: f64, cfg: &PidConfig) -> (PidState, f64) {
    debug_assert!(dt > 0.0);
    let e = cfg.sign * error;
    let d = state.prev_error.map_or(0.0, |p| (e - p) / dt);
    let (lo, hi) = cfg.output_limits;
    let trial = state.integral + e * dt;
    let raw_trial = cfg.kp * e + cfg.ki * trial + cfg.kd * d;
    let winds_up = (raw_trial > hi && cfg.ki * e > 0.0) || (raw_trial < lo && cfg.ki * e < 0.0);
    let integral = if winds_up { state.integral } else { trial };
    let raw = cfg.kp * e + cfg.ki * integral + cfg.kd * d;
    let out = raw.clamp(lo, hi);
    let next = PidState { integral, prev_error: Some(e), output: out, saturated: out != raw };
    (next, out)
}
