//! Quantum noise locking: dithered LO phase, zero-span band-power sensing,
//! lock-in demodulation and PID feedback through the PZT plant; plus the
//! open-loop phase scan.
//!
//! Scenarios are written in lab units. Internally every frequency is divided
//! by `scale_factor` (variances untouched) and results are mapped back, so
//! reported times and frequencies are always lab values.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use rand_chacha::ChaCha8Rng;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::detection::{detected_variance, total_efficiency, DetectorModel, EfficiencyBudget};
use crate::dsp::{pid_step, welch_psd_with, LockIn, LockInConfig, OnePole, PidConfig, PidState, Window, ZeroSpanConfig, ZeroSpanDetector};
use crate::error::{check_positive, invalid, Error, Result};
use crate::exec::Execution;
use crate::opo::{output_variances, CavityParams, NoiseInputs, QuadPair};
use crate::series::TimeSeries;
use crate::spectrum::{Spectrum, SpectrumUnit};
use crate::stochastic::{normal, stream_rng, streams, DisturbanceModel, DisturbanceStream, PztPlant, QuadratureSource, SimConfig};

/// Half-width of the capture window around the lock point, rad.
pub const CAPTURE_WINDOW: f64 = 0.2;
/// Dither periods in-window needed to declare acquisition.
pub const ACQUIRE_PERIODS: f64 = 10.0;
/// Dither periods out-of-window after which lock is declared lost.
pub const LOST_PERIODS: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum LockMode {
    Scan,
    LockSqueeze,
    LockAntisqueeze,
}

impl LockMode {
    /// Phase the loop should hold, modulo π.
    pub fn target(self) -> f64 {
        match self {
            LockMode::LockAntisqueeze => FRAC_PI_2,
            _ => 0.0,
        }
    }
}

/// Welch settings of the recorded difference-signal spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SpectrumSettings {
    pub segment_length: usize,
    pub averages: usize,
    /// Upper edge of the plateau band, Hz (lab).
    pub max_frequency: f64,
}

impl Default for SpectrumSettings {
    fn default() -> Self {
        Self { segment_length: 10_000, averages: 16, max_frequency: 50e3 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LockScenario {
    pub params: CavityParams,
    pub noise: NoiseInputs,
    pub budget: EfficiencyBudget,
    pub detector: DetectorModel,
    pub disturbance: DisturbanceModel,
    pub zero_span: ZeroSpanConfig,
    pub lock_in: LockInConfig,
    pub pid: PidConfig,
    /// Lab seconds.
    pub duration: f64,
    pub seed: u64,
    pub mode: LockMode,
    /// LO phase offset at t = 0, rad.
    pub initial_phase: f64,
    /// Scan mode only, rad/s.
    pub ramp_rate: f64,
    /// Photocurrent sample rate, Hz (lab).
    pub sample_rate: f64,
    /// Photocurrent samples per servo update.
    pub servo_decimation: usize,
    pub spectrum: SpectrumSettings,
    pub scale_factor: f64,
}

/// Simulation-unit copy of a scenario.
#[derive(Debug, Clone)]
struct Scaled {
    params: CavityParams,
    noise: NoiseInputs,
    detector: DetectorModel,
    disturbance: DisturbanceModel,
    zero_span: ZeroSpanConfig,
    lock_in: LockInConfig,
    pid: PidConfig,
    duration: f64,
    ramp_rate: f64,
    sample_rate: f64,
}

impl LockScenario {
    pub fn validate(&self) -> Result<()> {
        self.noise.validate()?;
        self.budget.validate()?;
        self.detector.validate()?;
        self.disturbance.validate()?;
        self.zero_span.validate()?;
        self.lock_in.validate()?;
        self.pid.validate()?;
        check_positive("run.duration", self.duration)?;
        check_positive("run.sample_rate", self.sample_rate)?;
        check_positive("run.scale_factor", self.scale_factor)?;
        if !self.initial_phase.is_finite() || !self.ramp_rate.is_finite() {
            return Err(invalid("run", "initial_phase and ramp_rate must be finite"));
        }
        if self.servo_decimation == 0 {
            return Err(invalid("run.servo_decimation", "must be at least 1"));
        }
        let per_dither = self.servo_rate() / self.lock_in.mod_frequency;
        if self.mode != LockMode::Scan && per_dither < 20.0 {
            return Err(invalid(
                "run.servo_decimation",
                format!("servo rate gives {per_dither:.1} samples per dither period, need >= 20"),
            ));
        }
        if self.spectrum.segment_length < 16 || self.spectrum.averages == 0 {
            return Err(invalid("spectrum", "segment_length >= 16 and averages >= 1 required"));
        }
        check_positive("spectrum.max_frequency", self.spectrum.max_frequency)?;
        // the rate guards hold in lab units because scaling moves every rate together
        let required = SimConfig::required_sample_rate(&self.params);
        if !(self.sample_rate > required) {
            return Err(Error::SampleRateGuard { sample_rate: self.sample_rate, required });
        }
        let analyzer_top = self.zero_span.center_frequency + self.zero_span.rbw;
        if !(2.0 * analyzer_top < self.sample_rate) {
            return Err(Error::SampleRateGuard { sample_rate: self.sample_rate, required: 2.0 * analyzer_top });
        }
        let pzt = 10.0 * self.disturbance.pzt_resonance.f0;
        if !(self.servo_rate() > pzt) {
            return Err(Error::SampleRateGuard { sample_rate: self.servo_rate(), required: pzt });
        }
        self.scaled().map(|_| ())
    }

    pub fn efficiency(&self) -> f64 {
        total_efficiency(&self.budget)
    }

    /// Servo update rate, Hz (lab).
    pub fn servo_rate(&self) -> f64 {
        self.sample_rate / self.servo_decimation as f64
    }

    /// Effective PID sign for the configured mode.
    pub fn loop_sign(&self) -> f64 {
        match self.mode {
            LockMode::LockAntisqueeze => self.pid.sign,
            _ => -self.pid.sign,
        }
    }

    /// Cavity output variances at `f` (lab Hz).
    pub fn cavity_variances(&self, f: f64) -> Result<QuadPair<f64>> {
        output_variances(&self.params, &self.noise, 2.0 * PI * f)
    }

    /// Static chain prediction at LO phase `theta`, dark noise excluded.
    pub fn predicted_variance(&self, theta: f64, f: f64) -> Result<f64> {
        let v = self.cavity_variances(f)?;
        Ok(detected_variance(v.plus, v.minus, theta, self.efficiency(), &self.detector, f, false))
    }

    /// Peak phase excursion of the dither, rad.
    pub fn dither_depth(&self) -> Result<f64> {
        let fs = self.servo_rate();
        let plant = PztPlant::new(&self.disturbance.pzt_resonance, fs)?;
        Ok(self.lock_in.mod_amplitude * plant.response(self.lock_in.mod_frequency, fs).norm())
    }

    fn scaled(&self) -> Result<Scaled> {
        let s = self.scale_factor;
        let f = 1.0 / s;
        Ok(Scaled {
            params: self.params.frequency_scaled(f)?,
            noise: self.noise.frequency_scaled(f),
            detector: self.detector.frequency_scaled(f),
            disturbance: self.disturbance.frequency_scaled(f),
            zero_span: self.zero_span.frequency_scaled(f),
            lock_in: self.lock_in.frequency_scaled(f),
            pid: self.pid.frequency_scaled(f),
            duration: self.duration * s,
            ramp_rate: self.ramp_rate * f,
            sample_rate: self.sample_rate * f,
        })
    }

    /// Reference phase that aligns the lock-in with the power modulation
    /// produced by the dither: plant phase, hold delay, resolution-filter
    /// power-kernel delay and video-filter phase.
    pub fn auto_demod_phase(&self) -> Result<f64> {
        Ok(self.modulation_path()?.arg())
    }

    /// Complex transfer from dither drive to zero-span reading at f_mod,
    /// per unit of `dP/dθ`.
    fn modulation_path(&self) -> Result<Complex64> {
        let fs = self.servo_rate();
        let fm = self.lock_in.mod_frequency;
        let plant = PztPlant::new(&self.disturbance.pzt_resonance, fs)?.response(fm, fs);
        let hold = Complex64::from_polar(1.0, -PI * fm / fs);
        let det = ZeroSpanDetector::new(&self.zero_span, self.sample_rate)?;
        let video = det.video().response(fm, self.sample_rate);
        let kernel = power_kernel_response(det.bandpass(), fm, self.sample_rate);
        Ok(plant * hold * kernel * video)
    }

    /// Analytic settled lock-in output for a dither around `theta0`.
    pub fn analytic_error(&self, theta0: f64) -> Result<f64> {
        let f = self.zero_span.center_frequency;
        let dv = self.predicted_variance(FRAC_PI_2, f)? - self.predicted_variance(0.0, f)?;
        let path = self.modulation_path()?;
        let delta = self.lock_in.mod_amplitude * path.norm();
        let phase = self.lock_in.demod_phase.map_or(0.0, |p| path.arg() - p);
        Ok(dv * (2.0 * theta0).sin() * bessel_j1(2.0 * delta) * phase.cos())
    }
}

/// Normalized transfer of `Σ h[n]² e^{-iωn}`: how a slow change of input
/// variance reaches the band power.
fn power_kernel_response(bp: &crate::dsp::Cascade, f: f64, fs: f64) -> Complex64 {
    let mut filt = bp.clone();
    filt.reset();
    let w = 2.0 * PI * f / fs;
    let (mut num, mut den) = (Complex64::new(0.0, 0.0), 0.0);
    let mut y = filt.process(1.0);
    for n in 0..2_000_000usize {
        if n > 0 {
            y = filt.process(0.0);
        }
        let e = y * y;
        num += Complex64::from_polar(e, -w * n as f64);
        den += e;
        if n > 1000 && e < 1e-20 * den {
            break;
        }
    }
    num / den
}

fn bessel_j1(x: f64) -> f64 {
    // series, ample for the sub-radian dither depths used here
    let mut term = x / 2.0;
    let mut sum = term;
    let q = -x * x / 4.0;
    for k in 1..12 {
        term *= q / (k as f64 * (k + 1) as f64);
        sum += term;
    }
    sum
}

/// Wrap to `(-π/2, π/2]`.
pub fn wrap_half_pi(x: f64) -> f64 {
    let r = (x + FRAC_PI_2).rem_euclid(PI) - FRAC_PI_2;
    if r <= -FRAC_PI_2 { r + PI } else { r }
}

/// Photocurrent synthesis: cavity quadratures, detection loss, LO excess
/// noise leaking through the CMRR, dark noise and the parasitic coherent
/// beat.
struct DetectionChain {
    src: QuadratureSource,
    sqrt_eta: f64,
    sqrt_loss: f64,
    loss_rng: ChaCha8Rng,
    dark_sd: f64,
    dark_rng: ChaCha8Rng,
    lo_sd: f64,
    lo_rng: ChaCha8Rng,
    lo_filter: OnePole,
    coherent: f64,
}

impl DetectionChain {
    fn new(sc: &Scaled, eta: f64, seed: u64, include_dark: bool) -> Result<Self> {
        let mut cfg = SimConfig::new(sc.params, sc.duration, sc.sample_rate, seed);
        cfg.noise = sc.noise.clone();
        let src = QuadratureSource::new(&cfg)?;
        let det = &sc.detector;
        Ok(Self {
            src,
            sqrt_eta: eta.sqrt(),
            sqrt_loss: (1.0 - eta).sqrt(),
            loss_rng: stream_rng(seed, streams::DETECTION_LOSS),
            dark_sd: if include_dark { det.dark_variance().sqrt() } else { 0.0 },
            dark_rng: stream_rng(seed, streams::DARK_NOISE),
            lo_sd: det.leakage_at(0.0).sqrt(),
            lo_rng: stream_rng(seed, streams::LO_NOISE),
            lo_filter: OnePole::new(det.lo_classical_noise.corner_hz, sc.sample_rate),
            coherent: det.parasitic_coherent_amplitude * (2.0 / sc.sample_rate).sqrt(),
        })
    }

    #[inline]
    fn sample(&mut self, cos: f64, sin: f64) -> f64 {
        let q = self.src.next_pair();
        let mut y = self.sqrt_eta * (cos * q.minus + sin * q.plus);
        if self.sqrt_loss > 0.0 {
            y += self.sqrt_loss * normal(&mut self.loss_rng);
        }
        if self.lo_sd > 0.0 {
            y += self.lo_filter.process(self.lo_sd * normal(&mut self.lo_rng));
        }
        if self.dark_sd > 0.0 {
            y += self.dark_sd * normal(&mut self.dark_rng);
        }
        y + self.coherent * sin
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LockVerdict {
    Locked,
    Lost,
    Never,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LockResult {
    /// Full LO phase θ(t) including the dither, rad.
    pub phase_trajectory: TimeSeries,
    /// θ(t) with the dither contribution removed.
    pub lock_point_trajectory: TimeSeries,
    pub error_signal: TimeSeries,
    /// Integrate-and-dump decimated photocurrent (dark noise included).
    pub difference_signal: TimeSeries,
    /// Dark-subtracted, normalized spectrum of the locked segment.
    pub locked_spectrum: Option<Spectrum>,
    /// First acquisition.
    pub lock_acquired_at: Option<f64>,
    /// Start of the acquisition the run ends in; differs from
    /// `lock_acquired_at` after a drop and re-lock.
    pub locked_since: Option<f64>,
    /// Start of the final out-of-window stretch, when the run ends unlocked.
    pub lost_at: Option<f64>,
    /// Over the final locked stretch.
    pub residual_phase_rms: Option<f64>,
    /// Lock-point phase at the end of the run, wrapped to (−π/2, π/2].
    pub final_phase: f64,
    pub verdict: LockVerdict,
    pub demod_phase: f64,
    pub diagnostics: Vec<String>,
}

/// JSON-exportable digest of a [`LockResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LockSummary {
    pub verdict: LockVerdict,
    pub lock_acquired_at_s: Option<f64>,
    pub locked_since_s: Option<f64>,
    pub lost_at_s: Option<f64>,
    pub residual_phase_rms_rad: Option<f64>,
    pub final_phase_rad: f64,
    pub demod_phase_rad: f64,
    pub spectrum_averages: Option<usize>,
    pub diagnostics: Vec<String>,
}

impl LockResult {
    pub fn summary(&self, scenario: &LockScenario) -> LockSummary {
        let averages = self
            .locked_spectrum
            .as_ref()
            .map(|_| self.spectrum_segments(scenario).min(scenario.spectrum.averages));
        LockSummary {
            verdict: self.verdict,
            lock_acquired_at_s: self.lock_acquired_at,
            locked_since_s: self.locked_since,
            lost_at_s: self.lost_at,
            residual_phase_rms_rad: self.residual_phase_rms,
            final_phase_rad: self.final_phase,
            demod_phase_rad: self.demod_phase,
            spectrum_averages: averages,
            diagnostics: self.diagnostics.clone(),
        }
    }

    fn spectrum_segments(&self, scenario: &LockScenario) -> usize {
        let start = self.locked_since.unwrap_or(f64::INFINITY);
        let avail = self.difference_signal.samples().len()
            - locked_start_index(&self.difference_signal, start, scenario).min(self.difference_signal.len());
        avail / scenario.spectrum.segment_length
    }
}

fn locked_start_index(sig: &TimeSeries, acquired_at: f64, sc: &LockScenario) -> usize {
    let settle = ACQUIRE_PERIODS / sc.lock_in.mod_frequency;
    (((acquired_at + settle) - sig.start_time()) * sig.sample_rate()).ceil().max(0.0) as usize
}

/// Raw per-servo-sample records of one closed- or open-loop run.
struct Trace {
    theta: Vec<f64>,
    lock_point: Vec<f64>,
    power: Vec<f64>,
    error: Vec<f64>,
    decimated: Vec<f64>,
    servo_rate: f64,
    diverged: Option<usize>,
}

fn simulate(scenario: &LockScenario, include_dark: bool, open_loop_phase: Option<f64>) -> Result<Trace> {
    scenario.validate()?;
    let sc = scenario.scaled()?;
    let d = scenario.servo_decimation;
    let fs_servo = sc.sample_rate / d as f64;
    let dt = 1.0 / fs_servo;
    let n_servo = (sc.duration * fs_servo).round() as usize;
    let seed = scenario.seed;
    let mut chain = DetectionChain::new(&sc, scenario.efficiency(), seed, include_dark)?;
    let mut zs = ZeroSpanDetector::new(&sc.zero_span, sc.sample_rate)?;
    let mut dist = DisturbanceStream::new(&sc.disturbance, fs_servo, seed)?;
    let mut plant = PztPlant::new(&sc.disturbance.pzt_resonance, fs_servo)?;
    let mut plant_dither = plant.clone();
    let demod = match sc.lock_in.demod_phase {
        Some(p) => p,
        None => scenario.auto_demod_phase()?,
    };
    let mut lockin = LockIn::new(&sc.lock_in, demod, fs_servo, dt)?;
    let pid_cfg = sc.pid.with_sign(scenario.loop_sign());
    let mut pid = PidState::default();
    let mut pzt_rng = stream_rng(seed, streams::PZT_DRIVE);
    let drive_sd = sc.disturbance.pzt_drive_noise * (fs_servo / 2.0).sqrt();
    let (vm, wm) = (sc.lock_in.mod_amplitude, 2.0 * PI * sc.lock_in.mod_frequency);
    let sqrt_d = (d as f64).sqrt();
    let scan = scenario.mode == LockMode::Scan;
    let (lo, hi) = sc.pid.output_limits;
    let rail_limit = (LOST_PERIODS * fs_servo / sc.lock_in.mod_frequency) as usize;

    let mut tr = Trace {
        theta: Vec::with_capacity(n_servo),
        lock_point: Vec::with_capacity(n_servo),
        power: Vec::with_capacity(n_servo),
        error: Vec::with_capacity(n_servo),
        decimated: Vec::with_capacity(n_servo),
        servo_rate: fs_servo,
        diverged: None,
    };
    let base = open_loop_phase.unwrap_or(scenario.initial_phase);
    let mut theta = base + dist.next_value();
    let mut lock_point = theta;
    let mut on_rail = 0usize;
    for k in 0..n_servo {
        let (s, c) = theta.sin_cos();
        let mut acc = 0.0;
        let mut p = 0.0;
        for _ in 0..d {
            let y = chain.sample(c, s);
            p = zs.push(y);
            acc += y;
        }
        tr.theta.push(theta);
        tr.lock_point.push(lock_point);
        tr.power.push(p);
        tr.decimated.push(acc / sqrt_d);

        let t_next = (k + 1) as f64 * dt;
        if scan {
            theta = base + sc.ramp_rate * t_next + dist.next_value();
            lock_point = theta;
            tr.error.push(0.0);
            continue;
        }
        let e = lockin.process(p);
        tr.error.push(e);
        let u = if open_loop_phase.is_some() {
            0.0
        } else {
            let (next, u) = pid_step(pid, e, dt, &pid_cfg);
            pid = next;
            u
        };
        if tr.diverged.is_none() {
            on_rail = if u <= lo || u >= hi { on_rail + 1 } else { 0 };
            if !u.is_finite() || on_rail > rail_limit {
                tr.diverged = Some(k);
            }
        }
        let dither = vm * (wm * t_next).sin();
        let noise = if drive_sd > 0.0 { drive_sd * normal(&mut pzt_rng) } else { 0.0 };
        let dither_phase = plant_dither.process(dither);
        let actuated = plant.process(u + dither + noise);
        theta = base + dist.next_value() + actuated;
        if !theta.is_finite() {
            return Err(invalid("phase", "non-finite LO phase; the loop diverged numerically"));
        }
        lock_point = theta - dither_phase;
    }
    Ok(tr)
}

/// Acquisition / loss bookkeeping on a lock-point trajectory.
/// Lock bookkeeping in servo-sample indices.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
struct Classified {
    first_acquired: Option<usize>,
    /// Start of the acquisition the run ends in, if it ends locked.
    final_acquired: Option<usize>,
    /// Start of the out-of-window stretch the run ends in, if it ends lost.
    lost: Option<usize>,
    /// (lost, re-acquired) pairs.
    relocks: usize,
}

fn classify(lock_point: &[f64], target: f64, fs: f64, f_mod: f64) -> Classified {
    let need_in = (ACQUIRE_PERIODS * fs / f_mod).ceil() as usize;
    let need_out = (LOST_PERIODS * fs / f_mod).ceil() as usize;
    let inside = |th: f64| wrap_half_pi(th - target).abs() < CAPTURE_WINDOW;
    let mut c = Classified::default();
    let mut locked = false;
    let mut stretch_start = 0usize;
    let mut prev_inside = None;
    for (i, &th) in lock_point.iter().enumerate() {
        let now = inside(th);
        if prev_inside != Some(now) {
            stretch_start = i;
            prev_inside = Some(now);
        }
        let len = i + 1 - stretch_start;
        if !locked && now && len >= need_in {
            locked = true;
            c.first_acquired.get_or_insert(stretch_start);
            if c.lost.take().is_some() {
                c.relocks += 1;
            }
            c.final_acquired = Some(stretch_start);
        } else if locked && !now && len > need_out {
            locked = false;
            c.lost = Some(stretch_start);
            c.final_acquired = None;
        }
    }
    c
}

/// Welch spectrum of the tail of `sig`, normalized to shot noise, with the
/// dark-noise floor removed. `sig` is in lab time.
fn normalized_spectrum(sig: &[f64], fs: f64, settings: &SpectrumSettings, dark: f64) -> Result<Spectrum> {
    let len = settings.segment_length;
    let segs = (sig.len() / len).min(settings.averages);
    if segs == 0 {
        return Err(Error::SeriesTooShort { len: sig.len(), required: len });
    }
    let tail = sig[sig.len() - segs * len..].to_vec();
    let ts = TimeSeries::new(fs, 0.0, tail)?;
    let psd = welch_psd_with(&ts, len, 0.0, Window::Hann, Some(segs), Execution::Sequential)?;
    let values = psd.values().iter().map(|p| p * fs / 2.0 - dark).collect::<Vec<_>>();
    if let Some((_, v)) = values.iter().enumerate().skip(1).find(|(_, v)| **v <= 0.0) {
        return Err(Error::OverSubtraction { value: *v });
    }
    Spectrum::new(psd.frequencies().to_vec(), values, 1.0, SpectrumUnit::Variance)
}

/// Closed-loop run. A `never` verdict (including a divergent actuator) is a
/// result, not an error.
pub fn run_lock(scenario: &LockScenario) -> Result<LockResult> {
    if scenario.mode == LockMode::Scan {
        return Err(invalid("run.mode", "run_lock needs lock_squeeze or lock_antisqueeze"));
    }
    let tr = simulate(scenario, true, None)?;
    let s = scenario.scale_factor;
    let fs_lab = tr.servo_rate * s;
    let target = scenario.mode.target();
    let c = classify(&tr.lock_point, target, tr.servo_rate, scenario.lock_in.mod_frequency / s);
    let t = |k: usize| k as f64 / fs_lab;
    let mut diagnostics = Vec::new();
    if let Some(k) = tr.diverged {
        diagnostics.push(format!(
            "actuator pinned at its output limit from t = {:.6} s; the loop is unstable or cannot follow",
            t(k)
        ));
    }
    if c.relocks > 0 {
        diagnostics.push(format!("lock dropped and was re-acquired {} time(s)", c.relocks));
    }
    let mut verdict = match (c.first_acquired, c.final_acquired) {
        (None, _) => LockVerdict::Never,
        (Some(_), None) => LockVerdict::Lost,
        (Some(_), Some(_)) => LockVerdict::Locked,
    };
    if verdict == LockVerdict::Locked && tr.diverged.is_some() {
        verdict = LockVerdict::Lost;
    }
    if verdict == LockVerdict::Never {
        diagnostics.push(format!(
            "lock point never stayed within ±{CAPTURE_WINDOW} rad of the target for {ACQUIRE_PERIODS} dither periods"
        ));
    }
    // statistics of the stretch the run ends in
    let acq = c.final_acquired;
    let residual = acq.map(|a| {
        let seg = &tr.lock_point[a..];
        (seg.iter().map(|th| wrap_half_pi(th - target).powi(2)).sum::<f64>() / seg.len() as f64).sqrt()
    });
    let series = |v: Vec<f64>| TimeSeries::new(fs_lab, 0.0, v);
    let final_phase = wrap_half_pi(*tr.lock_point.last().unwrap_or(&0.0));
    let difference_signal = series(tr.decimated)?;
    let locked_spectrum = match (verdict, acq) {
        (LockVerdict::Locked, Some(a)) => {
            let start = locked_start_index(&difference_signal, t(a), scenario);
            let post = &difference_signal.samples()[start.min(difference_signal.len())..];
            match normalized_spectrum(post, fs_lab, &scenario.spectrum, scenario.detector.dark_variance()) {
                Ok(sp) => {
                    let segs = post.len() / scenario.spectrum.segment_length;
                    if segs < scenario.spectrum.averages {
                        diagnostics.push(format!(
                            "only {segs} of {} spectrum averages fit after acquisition",
                            scenario.spectrum.averages
                        ));
                    }
                    Some(sp)
                }
                Err(e) => {
                    diagnostics.push(format!("no locked spectrum: {e}"));
                    None
                }
            }
        }
        _ => None,
    };
    Ok(LockResult {
        phase_trajectory: series(tr.theta)?,
        lock_point_trajectory: series(tr.lock_point)?,
        error_signal: series(tr.error)?,
        difference_signal,
        locked_spectrum,
        lock_acquired_at: c.first_acquired.map(t),
        locked_since: acq.map(t),
        lost_at: c.lost.map(t),
        residual_phase_rms: residual,
        final_phase,
        verdict,
        demod_phase: scenario.lock_in.demod_phase.map_or_else(|| scenario.auto_demod_phase(), Ok)?,
        diagnostics,
    })
}

/// Same scenario over several (seed, initial phase) pairs.
pub fn run_lock_batch(scenario: &LockScenario, starts: &[(u64, f64)], exec: Execution) -> Result<Vec<LockResult>> {
    exec.try_map(starts, |&(seed, phase)| {
        let sc = LockScenario { seed, initial_phase: phase, ..scenario.clone() };
        run_lock(&sc)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanResult {
    /// Zero-span band power, normalized to shot noise, lab time.
    pub power: TimeSeries,
    pub phase: TimeSeries,
    /// Samples discarded before the extrema search (filter settling).
    pub settle_samples: usize,
    pub trough_db: f64,
    pub crest_db: f64,
}

/// Open-loop phase ramp read through the zero-span analyzer (dark noise
/// included, as on the instrument).
pub fn run_scan(scenario: &LockScenario, ramp_rate: f64) -> Result<ScanResult> {
    let sc = LockScenario { mode: LockMode::Scan, ramp_rate, ..scenario.clone() };
    let tr = simulate(&sc, true, None)?;
    let fs_lab = tr.servo_rate * sc.scale_factor;
    let settle = ((10.0 / (2.0 * PI * sc.zero_span.vbw) + 20.0 / sc.zero_span.rbw) * fs_lab).ceil() as usize;
    let tail = &tr.power[settle.min(tr.power.len())..];
    if tail.is_empty() {
        return Err(Error::SeriesTooShort { len: tr.power.len(), required: settle + 1 });
    }
    let (mn, mx) = tail.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !(mn > 0.0) {
        return Err(Error::NonPositive(mn));
    }
    Ok(ScanResult {
        power: TimeSeries::new(fs_lab, 0.0, tr.power)?,
        phase: TimeSeries::new(fs_lab, 0.0, tr.theta)?,
        settle_samples: settle,
        trough_db: 10.0 * mn.log10(),
        crest_db: 10.0 * mx.log10(),
    })
}

/// Static error-signal characteristic (open loop, dither on, no feedback).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorCurve {
    pub theta: Vec<f64>,
    /// Settled, time-averaged lock-in output from the stochastic chain.
    pub simulated: Vec<f64>,
    /// Standard error of each simulated point.
    pub noise_floor: Vec<f64>,
    pub analytic: Vec<f64>,
}

impl ErrorCurve {
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "theta_rad,error_simulated,error_noise_floor,error_analytic")?;
        for i in 0..self.theta.len() {
            writeln!(
                w,
                "{:.11e},{:.11e},{:.11e},{:.11e}",
                self.theta[i], self.simulated[i], self.noise_floor[i], self.analytic[i]
            )?;
        }
        Ok(())
    }
}

/// Each point runs `scenario.duration` open loop; the first half settles,
/// the second half is averaged in blocks for the noise floor.
pub fn error_signal_curve(scenario: &LockScenario, theta_grid: &[f64], exec: Execution) -> Result<ErrorCurve> {
    let base = LockScenario {
        mode: if scenario.mode == LockMode::Scan { LockMode::LockSqueeze } else { scenario.mode },
        disturbance: DisturbanceModel { pzt_drive_noise: 0.0, ..DisturbanceModel::quiet(scenario.disturbance.pzt_resonance) },
        ..scenario.clone()
    };
    let rows = exec.try_map(theta_grid, |&th| -> Result<(f64, f64, f64)> {
        let tr = simulate(&base, false, Some(th))?;
        let tail = &tr.error[tr.error.len() / 2..];
        let blocks = 10usize;
        let bl = (tail.len() / blocks).max(1);
        let means: Vec<f64> = tail.chunks(bl).take(blocks).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
        let m = means.iter().sum::<f64>() / means.len() as f64;
        let var = means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (means.len().max(2) - 1) as f64;
        Ok((m, (var / means.len() as f64).sqrt(), base.analytic_error(th)?))
    })?;
    Ok(ErrorCurve {
        theta: theta_grid.to_vec(),
        simulated: rows.iter().map(|r| r.0).collect(),
        noise_floor: rows.iter().map(|r| r.1).collect(),
        analytic: rows.iter().map(|r| r.2).collect(),
    })
}

/// A frequency band excluded from plateau statistics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArtifactBand {
    pub label: String,
    pub center: f64,
    pub half_width: f64,
}

/// Known peak locations (lab Hz): dither line, PZT resonance and its second
/// harmonic.
pub fn artifact_bands(scenario: &LockScenario, resolution: f64) -> Vec<ArtifactBand> {
    let r = &scenario.disturbance.pzt_resonance;
    let pzt_hw = (2.0 * resolution).max(3.0 * r.f0 / r.quality_factor);
    vec![
        ArtifactBand { label: "dither".into(), center: scenario.lock_in.mod_frequency, half_width: 2.0 * resolution },
        ArtifactBand { label: "pzt_resonance".into(), center: r.f0, half_width: pzt_hw },
        ArtifactBand { label: "pzt_second_harmonic".into(), center: 2.0 * r.f0, half_width: pzt_hw },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArtifactPeak {
    pub label: String,
    pub frequency: f64,
    pub level_db: f64,
    pub above_plateau_db: f64,
}

/// Locked spectrum with its plateau and the artifact peaks located.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArtifactReport {
    #[serde(skip)]
    pub spectrum: Spectrum,
    pub plateau_db: f64,
    pub predicted_plateau_db: f64,
    /// Mean of the lowest resolvable band, dB.
    pub low_band_db: f64,
    pub peaks: Vec<ArtifactPeak>,
    pub excluded: Vec<ArtifactBand>,
}

/// Bins counted as plateau: from the second bin (the first is inside the
/// window's main lobe around DC) up to `max_frequency`, minus artifacts.
pub fn plateau_bins(spectrum: &Spectrum, scenario: &LockScenario) -> Vec<usize> {
    let f = spectrum.frequencies();
    let df = f.get(1).copied().unwrap_or(1.0) - f[0];
    let bands = artifact_bands(scenario, df);
    (2..f.len())
        .filter(|&i| f[i] <= scenario.spectrum.max_frequency)
        .filter(|&i| bands.iter().all(|b| (f[i] - b.center).abs() > b.half_width))
        .collect()
}

pub fn locked_spectrum_with_artifacts(result: &LockResult, scenario: &LockScenario) -> Result<ArtifactReport> {
    if result.verdict != LockVerdict::Locked {
        return Err(invalid("verdict", "artifact analysis needs a locked run"));
    }
    let spectrum = result
        .locked_spectrum
        .clone()
        .ok_or_else(|| invalid("locked_spectrum", "the locked segment was too short for a spectrum"))?;
    let bins = plateau_bins(&spectrum, scenario);
    if bins.is_empty() {
        return Err(invalid("spectrum", "no plateau bins"));
    }
    let v = spectrum.values();
    let f = spectrum.frequencies();
    let mean = |idx: &[usize], g: &dyn Fn(usize) -> f64| idx.iter().map(|&i| g(i)).sum::<f64>() / idx.len() as f64;
    let plateau = mean(&bins, &|i| v[i]);
    let target = scenario.mode.target();
    let mut pred = Vec::with_capacity(bins.len());
    for &i in &bins {
        pred.push(scenario.predicted_variance(target, f[i])?);
    }
    let predicted = pred.iter().sum::<f64>() / pred.len() as f64;
    let low: Vec<usize> = bins.iter().copied().filter(|&i| f[i] <= 2.6e3).collect();
    let low_band = if low.is_empty() { plateau } else { mean(&low, &|i| v[i]) };
    let df = f[1] - f[0];
    let mut peaks = Vec::new();
    for band in artifact_bands(scenario, df) {
        let lo = band.center - band.half_width;
        let hi = band.center + band.half_width;
        let best = (1..f.len()).filter(|&i| f[i] >= lo && f[i] <= hi).max_by(|&a, &b| v[a].total_cmp(&v[b]));
        if let Some(i) = best {
            peaks.push(ArtifactPeak {
                label: band.label.clone(),
                frequency: f[i],
                level_db: 10.0 * v[i].log10(),
                above_plateau_db: 10.0 * (v[i] / plateau).log10(),
            });
        }
    }
    Ok(ArtifactReport {
        excluded: artifact_bands(scenario, df),
        spectrum,
        plateau_db: 10.0 * plateau.log10(),
        predicted_plateau_db: 10.0 * predicted.log10(),
        low_band_db: 10.0 * low_band.log10(),
        peaks,
    })
}
