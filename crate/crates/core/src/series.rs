use std::io::{self, Write};

use crate::error::{check_positive, invalid, Result};

/// Uniformly sampled real signal.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    sample_rate: f64,
    start_time: f64,
    samples: Vec<f64>,
}

impl TimeSeries {
    pub fn new(sample_rate: f64, start_time: f64, samples: Vec<f64>) -> Result<Self> {
        check_positive("sample_rate", sample_rate)?;
        if !start_time.is_finite() {
            return Err(invalid("start_time", "must be finite"));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(invalid("samples", format!("non-finite value at index {i}")));
        }
        Ok(Self {
            sample_rate,
            start_time,
            samples,
        })
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn start_time(&self) -> f64 {
        self.start_time
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn time(&self, index: usize) -> f64 {
        self.start_time + index as f64 / self.sample_rate
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    pub fn mean(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    /// Population variance about the sample mean.
    pub fn variance(&self) -> f64 {
        let n = self.samples.len();
        if n == 0 {
            return 0.0;
        }
        let m = self.mean();
        self.samples.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64
    }

    /// Drop the first `n` samples, advancing the start time accordingly.
    pub fn skip(&self, n: usize) -> TimeSeries {
        let n = n.min(self.samples.len());
        TimeSeries {
            sample_rate: self.sample_rate,
            start_time: self.time(n),
            samples: self.samples[n..].to_vec(),
        }
    }

    pub fn map(&self, f: impl FnMut(f64) -> f64) -> TimeSeries {
        TimeSeries {
            sample_rate: self.sample_rate,
            start_time: self.start_time,
            samples: self.samples.iter().copied().map(f).collect(),
        }
    }

    /// Block-average by `factor` (integrate-and-dump). White noise of unit
    /// per-sample variance stays unit-variance when `rescale` is set.
    pub fn decimate_mean(&self, factor: usize, rescale: bool) -> TimeSeries {
        let factor = factor.max(1);
        let norm = if rescale {
            1.0 / (factor as f64).sqrt()
        } else {
            1.0 / factor as f64
        };
        let samples = self
            .samples
            .chunks_exact(factor)
            .map(|c| c.iter().sum::<f64>() * norm)
            .collect();
        TimeSeries {
            sample_rate: self.sample_rate / factor as f64,
            start_time: self.start_time,
            samples,
        }
    }

    /// Rescale the time axis (`time_factor` multiplies every timestamp).
    pub fn rescale_time(&self, time_factor: f64) -> TimeSeries {
        TimeSeries {
            sample_rate: self.sample_rate / time_factor,
            start_time: self.start_time * time_factor,
            samples: self.samples.clone(),
        }
    }

    /// CSV with header `time_s,value`, 12 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "time_s,value")?;
        for (i, v) in self.samples.iter().enumerate() {
            writeln!(w, "{:.11e},{:.11e}", self.time(i), v)?;
        }
        Ok(())
    }
}
