use std::io::{self, Write};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectrumUnit {
    /// Variance relative to vacuum (shot noise = 1).
    Variance,
    /// One-sided power spectral density, signal units²/Hz.
    PowerDensity,
    /// Band power read by a zero-span instrument.
    BandPower,
}

/// Sampled spectrum on a strictly increasing frequency grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    frequencies: Vec<f64>,
    values: Vec<f64>,
    reference_level: f64,
    unit: SpectrumUnit,
}

impl Spectrum {
    pub fn new(
        frequencies: Vec<f64>,
        values: Vec<f64>,
        reference_level: f64,
        unit: SpectrumUnit,
    ) -> Result<Self> {
        if frequencies.len() != values.len() {
            return Err(invalid(
                "values",
                format!("{} values for {} frequencies", values.len(), frequencies.len()),
            ));
        }
        check_grid(&frequencies)?;
        if let Some(i) = values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(invalid(
                "values",
                format!("value {} at index {i} is negative or non-finite", values[i]),
            ));
        }
        if !(reference_level.is_finite() && reference_level > 0.0) {
            return Err(invalid("reference_level", "must be finite and > 0"));
        }
        Ok(Self {
            frequencies,
            values,
            reference_level,
            unit,
        })
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn reference_level(&self) -> f64 {
        self.reference_level
    }

    pub fn unit(&self) -> SpectrumUnit {
        self.unit
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Values divided by the reference level.
    pub fn normalized(&self) -> Vec<f64> {
        self.values.iter().map(|v| v / self.reference_level).collect()
    }

    /// dB relative to the reference level; zero values map to `-inf`.
    pub fn db(&self) -> Vec<f64> {
        self.values
            .iter()
            .map(|v| 10.0 * (v / self.reference_level).log10())
            .collect()
    }

    pub fn with_reference(mut self, reference_level: f64) -> Result<Self> {
        if !(reference_level.is_finite() && reference_level > 0.0) {
            return Err(invalid("reference_level", "must be finite and > 0"));
        }
        self.reference_level = reference_level;
        Ok(self)
    }

    /// Multiply every frequency by `factor` (used to report desk-scaled runs
    /// on the lab frequency axis).
    pub fn rescale_frequency(mut self, factor: f64) -> Self {
        for f in &mut self.frequencies {
            *f *= factor;
        }
        self
    }

    /// Index of the bin nearest to `f`.
    pub fn nearest_bin(&self, f: f64) -> Option<usize> {
        if self.frequencies.is_empty() {
            return None;
        }
        let i = self.frequencies.partition_point(|&x| x < f);
        let candidates = [i.saturating_sub(1), i.min(self.frequencies.len() - 1)];
        candidates
            .into_iter()
            .min_by(|&a, &b| {
                (self.frequencies[a] - f)
                    .abs()
                    .total_cmp(&(self.frequencies[b] - f).abs())
            })
    }

    /// Mean of the values whose frequency lies in `[lo, hi]`.
    pub fn band_mean(&self, lo: f64, hi: f64) -> Option<f64> {
        let (sum, n) = self
            .frequencies
            .iter()
            .zip(&self.values)
            .filter(|(f, _)| **f >= lo && **f <= hi)
            .fold((0.0, 0usize), |(s, n), (_, v)| (s + v, n + 1));
        (n > 0).then(|| sum / n as f64)
    }

    /// CSV with header `frequency_hz,value,value_db_rel_snl`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "frequency_hz,value,value_db_rel_snl")?;
        for (f, v) in self.frequencies.iter().zip(&self.values) {
            let db = 10.0 * (v / self.reference_level).log10();
            writeln!(w, "{:.11e},{:.11e},{}", f, v, fmt_db(db))?;
        }
        Ok(())
    }
}

/// Six decimals, with `-inf` / `inf` for unbounded levels.
pub fn fmt_db(db: f64) -> String {
    if db.is_finite() {
        format!("{db:.6}")
    } else if db < 0.0 {
        "-inf".to_string()
    } else {
        "inf".to_string()
    }
}

pub(crate) fn check_grid(frequencies: &[f64]) -> Result<()> {
    if let Some(i) = frequencies.iter().position(|f| !f.is_finite() || *f < 0.0) {
        return Err(invalid(
            "frequencies",
            format!("frequency {} at index {i} is negative or non-finite", frequencies[i]),
        ));
    }
    if let Some(i) = frequencies.windows(2).position(|w| w[1] <= w[0]) {
        return Err(invalid(
            "frequencies",
            format!("grid not strictly increasing at index {}", i + 1),
        ));
    }
    Ok(())
}

/// `n` logarithmically spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..n)
                .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
                .collect()
        }
    }
}
