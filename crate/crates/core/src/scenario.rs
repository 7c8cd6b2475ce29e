//! JSON scenario files: schema, load-time validation and built-in presets.
//!
//! Two failure classes are kept apart: a document that does not fit the
//! schema ([`ScenarioError::Schema`], with a line/column when one exists) and
//! a well-formed document describing impossible physics
//! ([`ScenarioError::Physics`]).

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::detection::{total_efficiency, DetectorModel, EfficiencyBudget, LoClassicalNoise};
use crate::dsp::{LockInConfig, PidConfig, ZeroSpanConfig};
use crate::error::Error;
use crate::noise_lock::{LockMode, LockScenario, SpectrumSettings};
use crate::opo::{decay_rates_from_geometry, fit_pump_gain, CavityGeometry, CavityParams, DecayRates, FitOptions, NoiseInputs};
use crate::stochastic::{DisturbanceModel, PztResonance};

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("schema error at line {line}, column {column}: {message}")]
    Schema { message: String, line: usize, column: usize },
    #[error("physics error: {0}")]
    Physics(#[from] Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub cavity: CavitySection,
    #[serde(default)]
    pub noise_inputs: NoiseInputs,
    pub budget: EfficiencyBudget,
    pub detector: DetectorModel,
    pub disturbance: DisturbanceModel,
    pub instrument: InstrumentSection,
    pub run: RunSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct GeometrySection {
    pub round_trip_length: f64,
    pub output_coupler_transmission: f64,
    pub input_coupler_transmission: f64,
    pub intracavity_loss: f64,
    pub pump_input_transmission: f64,
}

impl From<GeometrySection> for CavityGeometry {
    fn from(g: GeometrySection) -> Self {
        CavityGeometry {
            round_trip_length: g.round_trip_length,
            output_coupler_transmission: g.output_coupler_transmission,
            input_coupler_transmission: g.input_coupler_transmission,
            intracavity_loss: g.intracavity_loss,
            pump_input_transmission: g.pump_input_transmission,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct RatesSection {
    pub kappa_out_a: f64,
    pub kappa_in_a: f64,
    pub kappa_l_a: f64,
    pub kappa_in_b: f64,
    pub kappa_b: f64,
}

/// Exactly one of `gain_ratio` and `fit_anti_squeezing_db`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct PumpSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain_ratio: Option<f64>,
    /// Detected anti-squeezing the gain is fitted to, dB.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_anti_squeezing_db: Option<f64>,
    #[serde(default)]
    pub analysis_frequency_hz: f64,
    #[serde(default = "default_pump_fraction")]
    pub max_pump_fraction: f64,
}

fn default_pump_fraction() -> f64 {
    0.8
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct CavitySection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<GeometrySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rates: Option<RatesSection>,
    /// Collapse every fundamental port into the output coupler, keeping the
    /// total linewidth (lossless single-ended idealisation).
    #[serde(default)]
    pub single_ended: bool,
    pub pump: PumpSection,
    #[serde(default)]
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct InstrumentSection {
    pub zero_span: ZeroSpanConfig,
    pub lock_in: LockInConfig,
    pub pid: PidConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub mode: LockMode,
    /// Lab seconds.
    pub duration: f64,
    pub seed: u64,
    #[serde(default = "one")]
    pub scale_factor: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    #[serde(default)]
    pub initial_phase: f64,
    #[serde(default)]
    pub ramp_rate: f64,
    #[serde(default = "default_sample_rate")]
    pub sample_rate: f64,
    #[serde(default = "default_decimation")]
    pub servo_decimation: usize,
    #[serde(default)]
    pub spectrum: SpectrumSettings,
}

fn one() -> f64 {
    1.0
}
fn default_sample_rate() -> f64 {
    100e6
}
fn default_decimation() -> usize {
    100
}

/// Line and column (1-based) of the first `"key"` in `text`, if present.
fn locate(text: &str, key: &str) -> (usize, usize) {
    let needle = format!("\"{key}\"");
    match text.find(&needle) {
        Some(pos) => {
            let before = &text[..pos];
            let line = before.matches('\n').count() + 1;
            let col = pos - before.rfind('\n').map_or(0, |i| i + 1) + 1;
            (line, col)
        }
        None => (0, 0),
    }
}

impl ScenarioFile {
    /// Parse and fully validate.
    pub fn parse(text: &str) -> Result<(Self, LockScenario), ScenarioError> {
        let file: ScenarioFile = serde_json::from_str(text).map_err(|e| ScenarioError::Schema {
            message: e.to_string(),
            line: e.line(),
            column: e.column(),
        })?;
        let structural = |key: &str, message: String| {
            let (line, column) = locate(text, key);
            ScenarioError::Schema { message, line, column }
        };
        if let Some((key, msg)) = file.structure_problem() {
            return Err(structural(key, msg));
        }
        let scenario = file.build()?;
        Ok((file, scenario))
    }

    fn structure_problem(&self) -> Option<(&'static str, String)> {
        let c = &self.cavity;
        match (c.geometry.is_some(), c.rates.is_some()) {
            (true, true) => return Some(("rates", "cavity: give `geometry` or `rates`, not both".into())),
            (false, false) => return Some(("cavity", "cavity: one of `geometry` or `rates` is required".into())),
            _ => {}
        }
        match (c.pump.gain_ratio.is_some(), c.pump.fit_anti_squeezing_db.is_some()) {
            (true, true) => {
                Some(("fit_anti_squeezing_db", "cavity.pump: give `gain_ratio` or `fit_anti_squeezing_db`, not both".into()))
            }
            (false, false) => Some(("pump", "cavity.pump: one of `gain_ratio` or `fit_anti_squeezing_db` is required".into())),
            _ => None,
        }
    }

    pub fn rates(&self) -> Result<DecayRates, Error> {
        let mut rates = match (self.cavity.geometry, self.cavity.rates) {
            (Some(g), _) => decay_rates_from_geometry(&g.into())?,
            (None, Some(r)) => DecayRates {
                kappa_out_a: r.kappa_out_a,
                kappa_in_a: r.kappa_in_a,
                kappa_l_a: r.kappa_l_a,
                kappa_in_b: r.kappa_in_b,
                kappa_b: r.kappa_b,
            },
            (None, None) => return Err(crate::error::invalid("cavity", "no geometry or rates")),
        };
        if self.cavity.single_ended {
            rates = DecayRates { kappa_out_a: rates.kappa_a(), kappa_in_a: 0.0, kappa_l_a: 0.0, ..rates };
        }
        Ok(rates)
    }

    /// Cavity with the pump resolved (explicit ratio or fitted).
    pub fn cavity_params(&self) -> Result<CavityParams, Error> {
        let rates = self.rates()?;
        let pump = &self.cavity.pump;
        let template = CavityParams::with_gain(rates, 0.0, self.cavity.alpha)?;
        let gain = match (pump.gain_ratio, pump.fit_anti_squeezing_db) {
            (Some(r), None) => {
                if !(r.is_finite() && r >= 0.0) {
                    return Err(crate::error::invalid("cavity.pump.gain_ratio", format!("{r} must be >= 0")));
                }
                r * rates.kappa_a()
            }
            (None, Some(db)) => fit_pump_gain(
                db,
                total_efficiency(&self.budget),
                &template,
                &self.noise_inputs,
                FitOptions { analysis_frequency_hz: pump.analysis_frequency_hz, max_pump_fraction: pump.max_pump_fraction },
            )?,
            _ => return Err(crate::error::invalid("cavity.pump", "exactly one pump specification required")),
        };
        CavityParams::with_gain(rates, gain, self.cavity.alpha)
    }

    pub fn build(&self) -> Result<LockScenario, Error> {
        let sc = LockScenario {
            params: self.cavity_params()?,
            noise: self.noise_inputs.clone(),
            budget: self.budget,
            detector: self.detector,
            disturbance: self.disturbance.clone(),
            zero_span: self.instrument.zero_span,
            lock_in: self.instrument.lock_in,
            pid: self.instrument.pid,
            duration: self.run.duration,
            seed: self.run.seed,
            mode: self.run.mode,
            initial_phase: self.run.initial_phase,
            ramp_rate: self.run.ramp_rate,
            sample_rate: self.run.sample_rate,
            servo_decimation: self.run.servo_decimation,
            spectrum: self.run.spectrum,
            scale_factor: self.run.scale_factor,
        };
        sc.validate()?;
        Ok(sc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// JSON Schema of the scenario file format.
    pub fn json_schema() -> String {
        serde_json::to_string_pretty(&schemars::schema_for!(ScenarioFile)).expect("schema serializes") + "\n"
    }
}

/// Built-in scenarios in lab units.
pub mod presets {
    use super::*;

    fn lab_geometry() -> GeometrySection {
        let g = CavityGeometry::lab_opo();
        GeometrySection {
            round_trip_length: g.round_trip_length,
            output_coupler_transmission: g.output_coupler_transmission,
            input_coupler_transmission: g.input_coupler_transmission,
            intracavity_loss: g.intracavity_loss,
            pump_input_transmission: g.pump_input_transmission,
        }
    }

    /// 19 kHz mechanical resonance, 61.5 mrad/V.
    pub fn pzt() -> PztResonance {
        PztResonance { f0: 19e3, quality_factor: 100.0, gain: 0.0615, quadratic: 0.0 }
    }

    /// 35.01 kHz, 1.95 V dither; reference phase chosen automatically.
    pub fn lock_in() -> LockInConfig {
        LockInConfig { mod_frequency: 35.01e3, mod_amplitude: 1.95, demod_phase: None, output_lpf_cutoff: 700.0 }
    }

    /// Integral-dominant, roughly 7 Hz unity-gain bandwidth on the default
    /// locked scenario.
    pub fn pid() -> PidConfig {
        PidConfig { kp: 0.0, ki: 3700.0, kd: 0.0, output_limits: (-100.0, 100.0), sign: 1.0 }
    }

    /// Slow drift plus a weak random walk and resonance-shaped drive noise.
    pub fn lab_disturbance() -> DisturbanceModel {
        DisturbanceModel {
            linear_drift: 0.2,
            random_walk_diffusion: 1e-3,
            sinusoids: Vec::new(),
            pzt_resonance: pzt(),
            pzt_drive_noise: 5e-4,
        }
    }

    /// Phase scan at the 2 MHz sideband, 100 kHz RBW, 30 Hz VBW; pump fitted
    /// to the +7.0 dB crest.
    pub fn phase_scan() -> ScenarioFile {
        ScenarioFile {
            cavity: CavitySection {
                geometry: Some(lab_geometry()),
                rates: None,
                single_ended: true,
                pump: PumpSection {
                    gain_ratio: None,
                    fit_anti_squeezing_db: Some(7.0),
                    analysis_frequency_hz: 2e6,
                    max_pump_fraction: 0.8,
                },
                alpha: 0.0,
            },
            noise_inputs: NoiseInputs::default(),
            budget: EfficiencyBudget::lab(),
            detector: DetectorModel::lab(),
            disturbance: DisturbanceModel::quiet(pzt()),
            instrument: InstrumentSection {
                zero_span: ZeroSpanConfig { center_frequency: 2e6, rbw: 100e3, vbw: 30.0, sweep_time: 1.0 },
                lock_in: LockInConfig { mod_amplitude: 0.0, ..lock_in() },
                pid: pid(),
            },
            run: RunSection {
                mode: LockMode::Scan,
                duration: 1.0,
                seed: 1,
                scale_factor: 10.0,
                output_dir: None,
                initial_phase: -0.6,
                ramp_rate: 4.0,
                sample_rate: default_sample_rate(),
                servo_decimation: default_decimation(),
                spectrum: SpectrumSettings::default(),
            },
        }
    }

    /// Locked squeezing with the loop analyzer at 2 MHz (300 kHz RBW,
    /// 30 kHz VBW). The pump and LO excess noise are set so the audio band
    /// reads about −2.8 / +6.6 dB.
    pub fn audio_lock() -> ScenarioFile {
        ScenarioFile {
            cavity: CavitySection {
                geometry: Some(lab_geometry()),
                rates: None,
                single_ended: true,
                pump: PumpSection {
                    gain_ratio: Some(0.3684),
                    fit_anti_squeezing_db: None,
                    analysis_frequency_hz: 0.0,
                    max_pump_fraction: 0.8,
                },
                alpha: 0.0,
            },
            noise_inputs: NoiseInputs::default(),
            budget: EfficiencyBudget::lab(),
            detector: DetectorModel {
                lo_classical_noise: LoClassicalNoise { level_db: 38.7, corner_hz: 400e3 },
                parasitic_coherent_amplitude: 1000.0,
                ..DetectorModel::lab()
            },
            disturbance: lab_disturbance(),
            instrument: InstrumentSection {
                zero_span: ZeroSpanConfig { center_frequency: 2e6, rbw: 300e3, vbw: 30e3, sweep_time: 1.0 },
                lock_in: lock_in(),
                pid: pid(),
            },
            run: RunSection {
                mode: LockMode::LockSqueeze,
                duration: 0.45,
                seed: 1,
                scale_factor: 10.0,
                output_dir: None,
                initial_phase: 0.8,
                ramp_rate: 0.0,
                sample_rate: default_sample_rate(),
                servo_decimation: default_decimation(),
                spectrum: SpectrumSettings::default(),
            },
        }
    }
}
