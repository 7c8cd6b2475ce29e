//! Time-domain realisation of the sub-threshold OPO: per-branch
//! Ornstein-Uhlenbeck Langevin dynamics sampled as integrate-and-dump
//! photocurrent bins, plus the LO-phase disturbance and PZT plant.
//!
//! Sample normalisation: a bin is `(1/√h)∫ y dt`, so vacuum has unit
//! variance per sample and a one-sided Welch PSD `P(f)` corresponds to the
//! normalised variance `P(f)·fs/2`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::dsp::Biquad;
use crate::error::{check_non_negative, check_positive, invalid, Error, Result};
use crate::exec::Execution;
use crate::opo::{Branch, CavityParams, NoiseInputs, NoiseSpectrum, QuadPair};
use crate::series::TimeSeries;

/// Substream ids. Every noise source owns its own ChaCha stream so adding a
/// source never shifts another one.
pub mod streams {
    use crate::opo::Branch;

    pub fn cavity_port(branch: Branch, port: usize) -> u64 {
        let b = match branch {
            Branch::Plus => 0,
            Branch::Minus => 1,
        };
        1 + 3 * b + port as u64
    }
    /// Stationary initial state; `+1` for the minus branch.
    pub const CAVITY_INIT: u64 = 8;
    pub const DETECTION_LOSS: u64 = 10;
    pub const DARK_NOISE: u64 = 11;
    pub const LO_NOISE: u64 = 12;
    pub const DISTURBANCE: u64 = 20;
    pub const PZT_DRIVE: u64 = 21;
}

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[inline]
pub(crate) fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    #[default]
    ExactOu,
    EulerMaruyama,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub params: CavityParams,
    /// Port input spectra; must be frequency independent.
    pub noise: NoiseInputs,
    pub duration: f64,
    pub sample_rate: f64,
    pub rng_seed: u64,
    pub integrator: Integrator,
}

impl SimConfig {
    pub fn new(params: CavityParams, duration: f64, sample_rate: f64, rng_seed: u64) -> Self {
        Self {
            params,
            noise: NoiseInputs::default(),
            duration,
            sample_rate,
            rng_seed,
            integrator: Integrator::ExactOu,
        }
    }

    pub fn samples(&self) -> usize {
        (self.duration * self.sample_rate).round() as usize
    }

    pub fn required_sample_rate(params: &CavityParams) -> f64 {
        20.0 * params.kappa_a().max(params.gain()) / (2.0 * PI)
    }

    pub fn validate(&self) -> Result<()> {
        check_positive("duration", self.duration)?;
        check_positive("sample_rate", self.sample_rate)?;
        let required = Self::required_sample_rate(&self.params);
        if !(self.sample_rate > required) {
            return Err(Error::SampleRateGuard { sample_rate: self.sample_rate, required });
        }
        if self.samples() < 2 {
            return Err(invalid("duration", "duration·sample_rate must give at least 2 samples"));
        }
        if self.params.alpha() != 0.0 {
            return Err(Error::Unsupported(
                "time-domain engine supports a vacuum-seeded cavity only (alpha = 0)".into(),
            ));
        }
        self.noise.validate()?;
        for b in Branch::BOTH {
            constant_levels(&self.noise, b)?;
        }
        Ok(())
    }

    /// Burn-in discarded before the first returned sample, s.
    pub fn burn_in(&self) -> f64 {
        10.0 / (self.params.kappa_a() - self.params.gain())
    }
}

fn constant(s: &NoiseSpectrum, name: &str) -> Result<f64> {
    s.as_constant()
        .ok_or_else(|| Error::Unsupported(format!("{name} must be a constant spectrum in the time domain")))
}

/// `[out, in, loss]` input levels for one branch.
fn constant_levels(noise: &NoiseInputs, branch: Branch) -> Result<[f64; 3]> {
    Ok([
        constant(noise.v_vac.get(branch), "v_vac")?,
        constant(noise.v_seed.get(branch), "v_seed")?,
        constant(noise.v_loss.get(branch), "v_loss")?,
    ])
}

/// Integrals of the OU kernel over one step `h` with rate `g`.
#[derive(Debug, Clone, Copy)]
struct StepMoments {
    decay: f64,
    i1: f64,
    m1: f64,
    m12: f64,
    m2: f64,
}

impl StepMoments {
    fn new(gamma: f64, h: f64) -> Self {
        let gh = gamma * h;
        let decay = (-gh).exp();
        let i1 = -(-gh).exp_m1() / gamma;
        let m1 = -(-2.0 * gh).exp_m1() / (2.0 * gamma);
        let (m12, m2) = if gh < 1e-3 {
            let (h2, h3, h4, h5) = (h * h, h.powi(3), h.powi(4), h.powi(5));
            (
                h2 / 2.0 - gamma * h3 / 2.0 + 7.0 * gamma * gamma * h4 / 24.0,
                h3 / 3.0 - gamma * h4 / 4.0 + 7.0 * gamma * gamma * h5 / 60.0,
            )
        } else {
            ((i1 - m1) / gamma, (h - 2.0 * i1 + m1) / (gamma * gamma))
        };
        Self { decay, i1, m1, m12, m2 }
    }
}

/// One feed port: amplitude `√(2κV)` and its noise stream.
#[derive(Debug, Clone)]
struct Port {
    amp: f64,
    rng: ChaCha8Rng,
}

/// Streaming sampler of one output quadrature.
#[derive(Debug, Clone)]
pub struct BranchSource {
    x: f64,
    gamma: f64,
    h: f64,
    sqrt_2ko: f64,
    sqrt_vout: f64,
    ports: Vec<Port>,
    mom: StepMoments,
    // Cholesky factors of the (A, B) step covariance
    la: f64,
    lba: f64,
    lbb: f64,
    integrator: Integrator,
}

impl BranchSource {
    fn new(cfg: &SimConfig, branch: Branch) -> Result<Self> {
        let p = &cfg.params;
        let gamma = match branch {
            Branch::Plus => p.kappa_a() - p.gain(),
            Branch::Minus => p.kappa_a() + p.gain(),
        };
        let levels = constant_levels(&cfg.noise, branch)?;
        let rates = [p.kappa_out_a(), p.kappa_in_a(), p.kappa_l_a()];
        // the output port always comes first; silent ports are skipped
        let ports: Vec<Port> = (0..3)
            .map(|j| Port {
                amp: (2.0 * rates[j] * levels[j]).sqrt(),
                rng: stream_rng(cfg.rng_seed, streams::cavity_port(branch, j)),
            })
            .enumerate()
            .filter(|(j, p)| *j == 0 || p.amp > 0.0)
            .map(|(_, p)| p)
            .collect();
        let h = 1.0 / cfg.sample_rate;
        let mom = StepMoments::new(gamma, h);
        let la = mom.m1.sqrt();
        let lba = mom.m12 / la;
        let lbb = (mom.m2 - lba * lba).max(0.0).sqrt();
        let stationary: f64 = rates.iter().zip(levels).map(|(k, v)| 2.0 * k * v).sum::<f64>() / (2.0 * gamma);
        let mut init = stream_rng(cfg.rng_seed, streams::CAVITY_INIT + u64::from(branch == Branch::Minus));
        let mut src = Self {
            x: stationary.sqrt() * normal(&mut init),
            gamma,
            h,
            sqrt_2ko: (2.0 * p.kappa_out_a()).sqrt(),
            sqrt_vout: levels[0].sqrt(),
            ports,
            mom,
            la,
            lba,
            lbb,
            integrator: cfg.integrator,
        };
        let burn = (cfg.burn_in() * cfg.sample_rate).ceil() as usize;
        for _ in 0..burn {
            src.next_sample();
        }
        Ok(src)
    }

    /// Relaxation rate of this quadrature, rad/s.
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    #[inline]
    pub fn next_sample(&mut self) -> f64 {
        match self.integrator {
            Integrator::ExactOu => self.step_exact(),
            Integrator::EulerMaruyama => self.step_euler(),
        }
    }

    #[inline]
    fn step_exact(&mut self) -> f64 {
        let m = self.mom;
        let mut x_next = m.decay * self.x;
        let mut bin = m.i1 * self.x;
        let mut w_out = 0.0;
        for (j, port) in self.ports.iter_mut().enumerate() {
            let z1 = normal(&mut port.rng);
            let z2 = normal(&mut port.rng);
            let a = self.la * z1;
            let b = self.lba * z1 + self.lbb * z2;
            x_next += port.amp * a;
            bin += port.amp * b;
            if j == 0 {
                w_out = a + self.gamma * b;
            }
        }
        self.x = x_next;
        (self.sqrt_2ko * bin - self.sqrt_vout * w_out) / self.h.sqrt()
    }

    #[inline]
    fn step_euler(&mut self) -> f64 {
        let sh = self.h.sqrt();
        let mut x_next = self.x * (1.0 - self.gamma * self.h);
        let mut z_out = 0.0;
        for (j, port) in self.ports.iter_mut().enumerate() {
            let z = normal(&mut port.rng);
            x_next += port.amp * sh * z;
            if j == 0 {
                z_out = z;
            }
        }
        let y = self.sqrt_2ko * sh * self.x - self.sqrt_vout * z_out;
        self.x = x_next;
        y
    }
}

/// Both output quadratures, sample by sample.
#[derive(Debug, Clone)]
pub struct QuadratureSource {
    pub plus: BranchSource,
    pub minus: BranchSource,
}

impl QuadratureSource {
    pub fn new(cfg: &SimConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            plus: BranchSource::new(cfg, Branch::Plus)?,
            minus: BranchSource::new(cfg, Branch::Minus)?,
        })
    }

    #[inline]
    pub fn next_pair(&mut self) -> QuadPair<f64> {
        QuadPair::new(self.plus.next_sample(), self.minus.next_sample())
    }
}

/// Output quadratures `(x_out+, x_out−)` after burn-in. The two branches are
/// generated concurrently under [`Execution::Parallel`]; results do not
/// depend on the execution mode.
pub fn simulate_output_quadratures(cfg: &SimConfig) -> Result<QuadPair<TimeSeries>> {
    simulate_output_quadratures_with(cfg, Execution::default())
}

pub fn simulate_output_quadratures_with(cfg: &SimConfig, exec: Execution) -> Result<QuadPair<TimeSeries>> {
    cfg.validate()?;
    let n = cfg.samples();
    let start = cfg.burn_in();
    let mut out = exec.try_map(&Branch::BOTH, |&b| {
        let mut src = BranchSource::new(cfg, b)?;
        let s = (0..n).map(|_| src.next_sample()).collect();
        TimeSeries::new(cfg.sample_rate, start, s)
    })?;
    let minus = out.pop().expect("two branches");
    let plus = out.pop().expect("two branches");
    Ok(QuadPair::new(plus, minus))
}

/// Second-order PZT resonance `k ω0²/(s² + ω0 s/Q + ω0²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct PztResonance {
    pub f0: f64,
    pub quality_factor: f64,
    /// DC gain, rad/V.
    pub gain: f64,
    /// Optional `θ += c·θ_lin²` term; produces the second harmonic.
    #[serde(default)]
    pub quadratic: f64,
}

impl PztResonance {
    pub fn validate(&self) -> Result<()> {
        check_positive("pzt_resonance.f0", self.f0)?;
        check_positive("pzt_resonance.quality_factor", self.quality_factor)?;
        if !self.gain.is_finite() || !self.quadratic.is_finite() {
            return Err(invalid("pzt_resonance", "gain and quadratic must be finite"));
        }
        Ok(())
    }

    pub fn frequency_scaled(&self, factor: f64) -> Self {
        Self { f0: self.f0 * factor, ..*self }
    }
}

/// Streaming PZT plant, drive volts to phase radians.
#[derive(Debug, Clone)]
pub struct PztPlant {
    filter: Biquad,
    quadratic: f64,
}

impl PztPlant {
    pub fn new(res: &PztResonance, sample_rate: f64) -> Result<Self> {
        res.validate()?;
        let required = 10.0 * res.f0;
        if !(sample_rate > required) {
            return Err(Error::SampleRateGuard { sample_rate, required });
        }
        let w0 = 2.0 * PI * res.f0;
        // prewarped so the resonance lands exactly on f0
        let k = w0 / (PI * res.f0 / sample_rate).tan();
        let filter = Biquad::from_analog(
            [res.gain * w0 * w0, 0.0, 0.0],
            [w0 * w0, w0 / res.quality_factor, 1.0],
            k,
        );
        Ok(Self { filter, quadratic: res.quadratic })
    }

    #[inline]
    pub fn process(&mut self, drive: f64) -> f64 {
        let y = self.filter.process(drive);
        y + self.quadratic * y * y
    }

    pub fn response(&self, f: f64, sample_rate: f64) -> num_complex::Complex64 {
        self.filter.response(f, sample_rate)
    }
}

pub fn pzt_response(drive: &TimeSeries, res: &PztResonance) -> Result<TimeSeries> {
    let mut p = PztPlant::new(res, drive.sample_rate())?;
    let out = drive.samples().iter().map(|&v| p.process(v)).collect();
    TimeSeries::new(drive.sample_rate(), drive.start_time(), out)
}

/// A sinusoidal phase term `A sin(2πft + φ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct PhaseSinusoid {
    pub frequency: f64,
    pub amplitude: f64,
    #[serde(default)]
    pub phase: f64,
}

/// Slow LO-phase disturbance plus the actuator model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceModel {
    /// rad/s
    pub linear_drift: f64,
    /// rad²/s
    pub random_walk_diffusion: f64,
    #[serde(default)]
    pub sinusoids: Vec<PhaseSinusoid>,
    pub pzt_resonance: PztResonance,
    /// White voltage noise on the PZT drive, V/√Hz. Shaped by the resonance.
    #[serde(default)]
    pub pzt_drive_noise: f64,
}

impl DisturbanceModel {
    pub fn quiet(pzt_resonance: PztResonance) -> Self {
        Self {
            linear_drift: 0.0,
            random_walk_diffusion: 0.0,
            sinusoids: Vec::new(),
            pzt_resonance,
            pzt_drive_noise: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.linear_drift.is_finite() {
            return Err(invalid("disturbance.linear_drift", "must be finite"));
        }
        check_non_negative("disturbance.random_walk_diffusion", self.random_walk_diffusion)?;
        check_non_negative("disturbance.pzt_drive_noise", self.pzt_drive_noise)?;
        for s in &self.sinusoids {
            check_positive("disturbance.sinusoids.frequency", s.frequency)?;
            if !(s.amplitude.is_finite() && s.phase.is_finite()) {
                return Err(invalid("disturbance.sinusoids", "amplitude and phase must be finite"));
            }
        }
        self.pzt_resonance.validate()
    }

    /// Time axis compressed by `factor`: rates grow, frequencies grow, the
    /// phase excursion per scaled time is preserved.
    pub fn frequency_scaled(&self, factor: f64) -> Self {
        Self {
            linear_drift: self.linear_drift * factor,
            random_walk_diffusion: self.random_walk_diffusion * factor,
            sinusoids: self
                .sinusoids
                .iter()
                .map(|s| PhaseSinusoid { frequency: s.frequency * factor, ..*s })
                .collect(),
            pzt_resonance: self.pzt_resonance.frequency_scaled(factor),
            pzt_drive_noise: self.pzt_drive_noise / factor.sqrt(),
        }
    }
}

/// Streaming `θ_d(t)`; the first sample is at `t = 0` and is exactly 0 for
/// a model without sinusoids.
#[derive(Debug, Clone)]
pub struct DisturbanceStream {
    drift: f64,
    step_sd: f64,
    sinusoids: Vec<PhaseSinusoid>,
    dt: f64,
    n: u64,
    walk: f64,
    rng: ChaCha8Rng,
}

impl DisturbanceStream {
    pub fn new(model: &DisturbanceModel, sample_rate: f64, seed: u64) -> Result<Self> {
        model.validate()?;
        check_positive("sample_rate", sample_rate)?;
        let dt = 1.0 / sample_rate;
        Ok(Self {
            drift: model.linear_drift,
            step_sd: (model.random_walk_diffusion * dt).sqrt(),
            sinusoids: model.sinusoids.clone(),
            dt,
            n: 0,
            walk: 0.0,
            rng: stream_rng(seed, streams::DISTURBANCE),
        })
    }

    #[inline]
    pub fn next_value(&mut self) -> f64 {
        if self.n > 0 && self.step_sd > 0.0 {
            self.walk += self.step_sd * normal(&mut self.rng);
        }
        let t = self.n as f64 * self.dt;
        self.n += 1;
        let tones: f64 = self
            .sinusoids
            .iter()
            .map(|s| s.amplitude * (2.0 * PI * s.frequency * t + s.phase).sin())
            .sum();
        self.drift * t + self.walk + tones
    }
}

/// `duration·fs + 1` samples covering `[0, duration]` inclusive.
pub fn simulate_phase_disturbance(
    model: &DisturbanceModel,
    duration: f64,
    sample_rate: f64,
    seed: u64,
) -> Result<TimeSeries> {
    check_non_negative("duration", duration)?;
    let mut s = DisturbanceStream::new(model, sample_rate, seed)?;
    let n = (duration * sample_rate).round() as usize + 1;
    TimeSeries::new(sample_rate, 0.0, (0..n).map(|_| s.next_value()).collect())
}
