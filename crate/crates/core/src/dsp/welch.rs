use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::exec::Execution;
use crate::series::TimeSeries;
use crate::spectrum::{Spectrum, SpectrumUnit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    #[default]
    Hann,
}

impl Window {
    /// Periodic window of length `n`.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
                .collect(),
        }
    }
}

// Segments are accumulated in fixed blocks so the result does not depend on
// the execution mode or thread count.
const BLOCK: usize = 32;

/// One-sided Welch PSD (units²/Hz).
pub fn welch_psd(series: &TimeSeries, segment_length: usize, overlap: f64, window: Window) -> Result<Spectrum> {
    welch_psd_with(series, segment_length, overlap, window, None, Execution::default())
}

/// As [`welch_psd`], optionally capped at `max_segments` averages.
pub fn welch_psd_with(
    series: &TimeSeries,
    segment_length: usize,
    overlap: f64,
    window: Window,
    max_segments: Option<usize>,
    exec: Execution,
) -> Result<Spectrum> {
    if segment_length < 2 {
        return Err(invalid("segment_length", "must be at least 2"));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(invalid("overlap", format!("{overlap} outside [0, 1)")));
    }
    let x = series.samples();
    if segment_length > x.len() {
        return Err(Error::SeriesTooShort { len: x.len(), required: segment_length });
    }
    let step = ((segment_length as f64 * (1.0 - overlap)).round() as usize).max(1);
    let mut n_seg = (x.len() - segment_length) / step + 1;
    if let Some(m) = max_segments {
        n_seg = n_seg.min(m.max(1));
    }
    let w = window.coefficients(segment_length);
    let wpow: f64 = w.iter().map(|v| v * v).sum();
    let fs = series.sample_rate();
    let n_bins = segment_length / 2 + 1;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(segment_length);

    let blocks: Vec<usize> = (0..n_seg.div_ceil(BLOCK)).collect();
    let partial = exec.map(&blocks, |&b| {
        let mut acc = vec![0.0; n_bins];
        let mut buf = vec![Complex64::new(0.0, 0.0); segment_length];
        let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        for s in b * BLOCK..((b + 1) * BLOCK).min(n_seg) {
            let seg = &x[s * step..s * step + segment_length];
            for ((c, v), wi) in buf.iter_mut().zip(seg).zip(&w) {
                *c = Complex64::new(v * wi, 0.0);
            }
            fft.process_with_scratch(&mut buf, &mut scratch);
            for (a, c) in acc.iter_mut().zip(&buf) {
                *a += c.norm_sqr();
            }
        }
        acc
    });
    let mut total = vec![0.0; n_bins];
    for p in partial {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    let scale = 1.0 / (fs * wpow * n_seg as f64);
    let nyquist_bin = (segment_length % 2 == 0).then_some(n_bins - 1);
    let values: Vec<f64> = total
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let one_sided = if k == 0 || Some(k) == nyquist_bin { 1.0 } else { 2.0 };
            v * scale * one_sided
        })
        .collect();
    let freqs: Vec<f64> = (0..n_bins).map(|k| k as f64 * fs / segment_length as f64).collect();
    Spectrum::new(freqs, values, 1.0, SpectrumUnit::PowerDensity)
}

/// Number of segments [`welch_psd`] averages for this configuration.
pub fn welch_segment_count(len: usize, segment_length: usize, overlap: f64) -> usize {
    if segment_length == 0 || segment_length > len {
        return 0;
    }
    let step = ((segment_length as f64 * (1.0 - overlap)).round() as usize).max(1);
    (len - segment_length) / step + 1
}
