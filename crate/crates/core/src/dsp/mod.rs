//! Instrument emulation: band-pass + square-law zero-span analyzer, Welch
//! PSD, lock-in amplifier and PID.

mod filter;
mod lockin;
mod pid;
mod welch;

use std::f64::consts::PI;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

pub use filter::{Biquad, Cascade, OnePole};
pub use lockin::{lock_in_demodulate, LockIn, LockInConfig};
pub use pid::{pid_step, PidConfig, PidState};
pub use welch::{welch_psd, welch_psd_with, welch_segment_count, Window};

use crate::error::{check_positive, invalid, Error, Result};
use crate::series::TimeSeries;

/// Fourth-order Butterworth band-pass (two biquads) with −3 dB edges at
/// `f0 ± bandwidth/2` and unit gain at `f0`.
pub fn design_bandpass(f0: f64, bandwidth: f64, sample_rate: f64) -> Result<Cascade> {
    check_positive("f0", f0)?;
    check_positive("bandwidth", bandwidth)?;
    check_positive("sample_rate", sample_rate)?;
    let required = 4.0 * (f0 + bandwidth);
    if !(sample_rate > required) {
        return Err(Error::SampleRateGuard { sample_rate, required });
    }
    if !(f0 > bandwidth / 2.0) {
        return Err(invalid("f0", format!("center {f0} Hz must exceed half the bandwidth {bandwidth} Hz")));
    }
    let warp = |f: f64| 2.0 * sample_rate * (PI * f / sample_rate).tan();
    let (lo, hi) = (warp(f0 - bandwidth / 2.0), warp(f0 + bandwidth / 2.0));
    let w0sq = lo * hi;
    let b = hi - lo;
    // 2nd-order Butterworth prototype pole; its conjugate yields the mirror pair.
    let p = num_complex::Complex64::new(-1.0, 1.0) / std::f64::consts::SQRT_2;
    let pb = p * b;
    let disc = (pb * pb - 4.0 * w0sq).sqrt();
    let k = 2.0 * sample_rate;
    let mut sections: Vec<Biquad> = [(pb + disc) / 2.0, (pb - disc) / 2.0]
        .into_iter()
        .map(|q| Biquad::from_analog([0.0, b, 0.0], [q.norm_sqr(), -2.0 * q.re, 1.0], k))
        .collect();
    let cascade = Cascade::new(sections.clone());
    let g = cascade.response(f0, sample_rate).norm();
    sections[0].scale_gain(1.0 / g);
    Ok(Cascade::new(sections))
}

pub fn bandpass(series: &TimeSeries, f0: f64, bandwidth: f64) -> Result<TimeSeries> {
    let mut filt = design_bandpass(f0, bandwidth, series.sample_rate())?;
    let out = series.samples().iter().map(|&x| filt.process(x)).collect();
    TimeSeries::new(series.sample_rate(), series.start_time(), out)
}

/// Square-law detector followed by a one-pole smoother at `vbw`.
pub fn envelope(series: &TimeSeries, vbw: f64) -> Result<TimeSeries> {
    check_positive("vbw", vbw)?;
    if !(vbw < series.sample_rate() / 10.0) {
        return Err(invalid("vbw", format!("{vbw} Hz must be below sample_rate/10")));
    }
    let mut lp = OnePole::new(vbw, series.sample_rate());
    let out = series.samples().iter().map(|&x| lp.process(x * x)).collect();
    TimeSeries::new(series.sample_rate(), series.start_time(), out)
}

/// Zero-span analyzer settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ZeroSpanConfig {
    pub center_frequency: f64,
    pub rbw: f64,
    pub vbw: f64,
    pub sweep_time: f64,
}

impl ZeroSpanConfig {
    pub fn validate(&self) -> Result<()> {
        check_positive("zero_span.center_frequency", self.center_frequency)?;
        check_positive("zero_span.rbw", self.rbw)?;
        check_positive("zero_span.vbw", self.vbw)?;
        check_positive("zero_span.sweep_time", self.sweep_time)?;
        if self.vbw > self.rbw {
            return Err(invalid("zero_span.vbw", "VBW must not exceed RBW"));
        }
        if !(self.center_frequency > self.rbw / 2.0) {
            return Err(invalid("zero_span.center_frequency", "must exceed RBW/2"));
        }
        Ok(())
    }

    pub fn frequency_scaled(&self, factor: f64) -> Self {
        Self {
            center_frequency: self.center_frequency * factor,
            rbw: self.rbw * factor,
            vbw: self.vbw * factor,
            sweep_time: self.sweep_time / factor,
        }
    }
}

/// Streaming zero-span detector, calibrated so unit-variance white noise
/// (shot noise) reads 1.
#[derive(Debug, Clone)]
pub struct ZeroSpanDetector {
    bandpass: Cascade,
    video: OnePole,
    calibration: f64,
    enbw: f64,
}

impl ZeroSpanDetector {
    pub fn new(cfg: &ZeroSpanConfig, sample_rate: f64) -> Result<Self> {
        cfg.validate()?;
        if !(cfg.vbw < sample_rate / 10.0) {
            return Err(invalid("zero_span.vbw", "must be below sample_rate/10"));
        }
        let bandpass = design_bandpass(cfg.center_frequency, cfg.rbw, sample_rate)?;
        let enbw = bandpass.enbw(sample_rate, cfg.center_frequency);
        Ok(Self {
            bandpass,
            video: OnePole::new(cfg.vbw, sample_rate),
            calibration: sample_rate / (2.0 * enbw),
            enbw,
        })
    }

    /// Equivalent noise bandwidth of the resolution filter, Hz.
    pub fn enbw(&self) -> f64 {
        self.enbw
    }

    pub fn bandpass(&self) -> &Cascade {
        &self.bandpass
    }

    pub fn video(&self) -> &OnePole {
        &self.video
    }

    #[inline]
    pub fn push(&mut self, x: f64) -> f64 {
        let y = self.bandpass.process(x);
        self.video.process(y * y) * self.calibration
    }

    pub fn value(&self) -> f64 {
        self.video.value() * self.calibration
    }
}

pub fn zero_span_power(series: &TimeSeries, cfg: &ZeroSpanConfig) -> Result<TimeSeries> {
    let mut det = ZeroSpanDetector::new(cfg, series.sample_rate())?;
    let out = series.samples().iter().map(|&x| det.push(x)).collect();
    TimeSeries::new(series.sample_rate(), series.start_time(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn tone(fs: f64, f: f64, amp: f64, n: usize) -> TimeSeries {
        let s = (0..n).map(|i| amp * (2.0 * PI * f * i as f64 / fs).sin()).collect();
        TimeSeries::new(fs, 0.0, s).unwrap()
    }

    fn white(fs: f64, n: usize, seed: u64) -> TimeSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        TimeSeries::new(fs, 0.0, (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()).unwrap()
    }

    fn amplitude_after(series: &TimeSeries, settle: usize) -> f64 {
        series.samples()[settle..].iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    #[test]
    fn passband_unity_at_center() {
        let (fs, f0, bw) = (1e6, 50e3, 5e3);
        let f = design_bandpass(f0, bw, fs).unwrap();
        assert!((f.response(f0, fs).norm() - 1.0).abs() < 1e-12);
        let y = bandpass(&tone(fs, f0, 1.0, 200_000), f0, bw).unwrap();
        let a = amplitude_after(&y, 100_000);
        assert!((a - 1.0).abs() < 0.01, "{a}");
    }

    #[test]
    fn edges_are_minus_three_db() {
        let (fs, f0, bw) = (1e6, 80e3, 10e3);
        let f = design_bandpass(f0, bw, fs).unwrap();
        let peak = f.response(f0, fs).norm();
        for e in [f0 - bw / 2.0, f0 + bw / 2.0] {
            let db = 20.0 * (f.response(e, fs).norm() / peak).log10();
            assert!((db + 3.01).abs() < 0.1, "{db}");
        }
    }

    #[test]
    fn stopband_attenuation_five_bandwidths_out() {
        let (fs, f0, bw) = (1e6, 100e3, 4e3);
        for f in [f0 - 5.0 * bw, f0 + 5.0 * bw] {
            let y = bandpass(&tone(fs, f, 1.0, 300_000), f0, bw).unwrap();
            let a = amplitude_after(&y, 150_000);
            assert!(20.0 * a.log10() <= -24.0, "{f}: {a}");
        }
    }

    #[test]
    fn enbw_matches_numerical_integral_of_response() {
        let (fs, f0, bw) = (1e6, 200e3, 30e3);
        let f = design_bandpass(f0, bw, fs).unwrap();
        let n = 500_000;
        let df = fs / 2.0 / n as f64;
        // midpoint rule over [0, fs/2]
        let integral: f64 = (0..n).map(|i| f.response((i as f64 + 0.5) * df, fs).norm_sqr() * df).sum();
        let enbw = f.enbw(fs, f0);
        assert!((integral / enbw - 1.0).abs() < 1e-6, "{integral} vs {enbw}");
        // brick-wall-like: ENBW of 4th-order Butterworth ≈ 1.11·bw
        assert!((enbw / bw - 1.11).abs() < 0.02, "{}", enbw / bw);
    }

    #[test]
    fn white_noise_variance_is_psd_times_enbw() {
        let (fs, f0, bw) = (1e6, 100e3, 20e3);
        let x = white(fs, 2_000_000, 11);
        let y = bandpass(&x, f0, bw).unwrap().skip(10_000);
        let n0 = 2.0 / fs;
        let enbw = design_bandpass(f0, bw, fs).unwrap().enbw(fs, f0);
        let ratio = y.variance() / (n0 * enbw);
        assert!((ratio - 1.0).abs() < 0.03, "{ratio}");
    }

    #[test]
    fn bandpass_guards() {
        assert!(matches!(design_bandpass(300e3, 50e3, 1e6), Err(Error::SampleRateGuard { .. })));
        assert!(design_bandpass(10e3, 30e3, 1e6).is_err());
    }

    #[test]
    fn bandpass_is_linear() {
        let x = white(1e5, 20_000, 2);
        let a = bandpass(&x, 5e3, 1e3).unwrap();
        let b = bandpass(&x.map(|v| 3.0 * v), 5e3, 1e3).unwrap();
        for (p, q) in a.samples().iter().zip(b.samples()) {
            assert!((3.0 * p - q).abs() <= 1e-12 * q.abs().max(1.0));
        }
    }

    #[test]
    fn envelope_of_tone_and_silence() {
        let fs = 1e6;
        let e = envelope(&tone(fs, 50e3, 2.0, 400_000), 1e3).unwrap();
        let tail = e.skip(300_000).mean();
        assert!((tail / 2.0 - 1.0).abs() < 0.01, "{tail}");
        let z = envelope(&TimeSeries::new(fs, 0.0, vec![0.0; 100]).unwrap(), 1e3).unwrap();
        assert!(z.samples().iter().all(|v| *v == 0.0));
        assert!(envelope(&z, 2e5).is_err());
    }

    #[test]
    fn envelope_fluctuation_shrinks_with_vbw() {
        let fs = 1e5;
        let x = white(fs, 1_000_000, 5);
        let wide = envelope(&x, 1e3).unwrap().skip(10_000);
        let narrow = envelope(&x, 1e2).unwrap().skip(10_000);
        assert!((wide.mean() - 1.0).abs() < 0.02);
        assert!((narrow.mean() - 1.0).abs() < 0.02);
        assert!(narrow.variance() < 0.3 * wide.variance());
    }

    #[test]
    fn zero_span_reads_one_for_shot_noise() {
        let fs = 1e6;
        let x = white(fs, 3_000_000, 9);
        for (rbw, vbw) in [(30e3, 3e3), (10e3, 300.0), (50e3, 1e3)] {
            let cfg = ZeroSpanConfig { center_frequency: 150e3, rbw, vbw, sweep_time: 1.0 };
            let p = zero_span_power(&x, &cfg).unwrap().skip(200_000);
            assert!((p.mean() - 1.0).abs() < 0.02, "rbw {rbw}: {}", p.mean());
        }
    }

    #[test]
    fn zero_span_tracks_slow_power_modulation() {
        let fs = 1e6;
        let x = white(fs, 2_000_000, 13);
        let fm = 20.0;
        let modded = TimeSeries::new(
            fs,
            0.0,
            x.samples()
                .iter()
                .enumerate()
                .map(|(i, v)| v * (1.0 + 0.5 * (2.0 * PI * fm * i as f64 / fs).sin()))
                .collect(),
        )
        .unwrap();
        let cfg = ZeroSpanConfig { center_frequency: 150e3, rbw: 50e3, vbw: 500.0, sweep_time: 1.0 };
        let p = zero_span_power(&modded, &cfg).unwrap();
        // power envelope (1 + 0.5 sin)² peaks near 2.25 at the quarter period
        let quarter = (fs / fm / 4.0) as usize;
        let at_peak = p.samples()[quarter + 50_000 - 200..quarter + 50_000 + 200].iter().sum::<f64>() / 400.0;
        let at_trough = p.samples()[3 * quarter + 50_000 - 200..3 * quarter + 50_000 + 200].iter().sum::<f64>() / 400.0;
        assert!(at_peak > 1.8 && at_trough < 0.5, "{at_peak} {at_trough}");
    }

    #[test]
    fn zero_span_config_invariants() {
        let bad = ZeroSpanConfig { center_frequency: 2e6, rbw: 3e5, vbw: 4e5, sweep_time: 1.0 };
        assert!(bad.validate().is_err());
        let bad = ZeroSpanConfig { center_frequency: 1e5, rbw: 3e5, vbw: 3e4, sweep_time: 1.0 };
        assert!(bad.validate().is_err());
    }
}
