//! Causal IIR building blocks: biquad sections, cascades and a one-pole
//! smoother.

use std::f64::consts::PI;

use num_complex::Complex64;

/// Normalized biquad coefficients (`a0 = 1`), transposed direct form II.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
    s1: f64,
    s2: f64,
}

impl Biquad {
    pub fn new(b: [f64; 3], a: [f64; 2]) -> Self {
        Self { b, a, s1: 0.0, s2: 0.0 }
    }

    /// Bilinear map of `(n2 s² + n1 s + n0) / (d2 s² + d1 s + d0)` with
    /// `s = K (1 − z⁻¹)/(1 + z⁻¹)`.
    pub fn from_analog(num: [f64; 3], den: [f64; 3], k: f64) -> Self {
        let [n0, n1, n2] = num;
        let [d0, d1, d2] = den;
        let k2 = k * k;
        let a0 = d2 * k2 + d1 * k + d0;
        let b = [
            (n2 * k2 + n1 * k + n0) / a0,
            (2.0 * n0 - 2.0 * n2 * k2) / a0,
            (n2 * k2 - n1 * k + n0) / a0,
        ];
        let a = [(2.0 * d0 - 2.0 * d2 * k2) / a0, (d2 * k2 - d1 * k + d0) / a0];
        Self::new(b, a)
    }

    /// Second-order Butterworth low-pass at `cutoff` (prewarped).
    pub fn butterworth_lowpass(cutoff: f64, sample_rate: f64) -> Self {
        let wc = 2.0 * PI * cutoff;
        let k = wc / (PI * cutoff / sample_rate).tan();
        Self::from_analog([wc * wc, 0.0, 0.0], [wc * wc, std::f64::consts::SQRT_2 * wc, 1.0], k)
    }

    #[inline]
    pub fn process(&mut self, x: f64) -> f64 {
        let y = self.b[0] * x + self.s1;
        self.s1 = self.b[1] * x - self.a[0] * y + self.s2;
        self.s2 = self.b[2] * x - self.a[1] * y;
        y
    }

    pub fn reset(&mut self) {
        self.s1 = 0.0;
        self.s2 = 0.0;
    }

    pub fn response(&self, f: f64, sample_rate: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -2.0 * PI * f / sample_rate);
        let z2 = z1 * z1;
        (self.b[0] + self.b[1] * z1 + self.b[2] * z2) / (1.0 + self.a[0] * z1 + self.a[1] * z2)
    }

    pub fn scale_gain(&mut self, g: f64) {
        for b in &mut self.b {
            *b *= g;
        }
    }
}

/// Series of biquads.
#[derive(Debug, Clone, PartialEq)]
pub struct Cascade {
    sections: Vec<Biquad>,
}

impl Cascade {
    pub fn new(sections: Vec<Biquad>) -> Self {
        Self { sections }
    }

    pub fn sections(&self) -> &[Biquad] {
        &self.sections
    }

    #[inline]
    pub fn process(&mut self, x: f64) -> f64 {
        self.sections.iter_mut().fold(x, |acc, s| s.process(acc))
    }

    pub fn reset(&mut self) {
        self.sections.iter_mut().for_each(Biquad::reset);
    }

    pub fn response(&self, f: f64, sample_rate: f64) -> Complex64 {
        self.sections
            .iter()
            .map(|s| s.response(f, sample_rate))
            .product()
    }

    /// `Σ h[n]²` of the impulse response, summed until the tail energy is
    /// negligible.
    pub fn impulse_energy(&self) -> f64 {
        let mut f = self.clone();
        f.reset();
        let mut total = 0.0;
        let mut y = f.process(1.0);
        total += y * y;
        let mut quiet = 0usize;
        for n in 1..50_000_000usize {
            y = f.process(0.0);
            let e = y * y;
            total += e;
            quiet = if e < 1e-18 * total { quiet + 1 } else { 0 };
            if quiet > 1000 && n > 1000 {
                break;
            }
        }
        total
    }

    /// One-sided equivalent noise bandwidth in Hz, normalized to `|H(f_ref)|²`.
    pub fn enbw(&self, sample_rate: f64, f_ref: f64) -> f64 {
        let peak = self.response(f_ref, sample_rate).norm_sqr();
        self.impulse_energy() * sample_rate / 2.0 / peak
    }
}

/// `y += a (x − y)`, `a = 1 − exp(−2π f_c / f_s)`; unit DC gain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OnePole {
    a: f64,
    y: f64,
}

impl OnePole {
    pub fn new(cutoff: f64, sample_rate: f64) -> Self {
        Self {
            a: -(-2.0 * PI * cutoff / sample_rate).exp_m1(),
            y: 0.0,
        }
    }

    #[inline]
    pub fn process(&mut self, x: f64) -> f64 {
        self.y += self.a * (x - self.y);
        self.y
    }

    pub fn value(&self) -> f64 {
        self.y
    }

    pub fn reset(&mut self) {
        self.y = 0.0;
    }

    pub fn response(&self, f: f64, sample_rate: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -2.0 * PI * f / sample_rate);
        Complex64::new(self.a, 0.0) / (1.0 - (1.0 - self.a) * z1)
    }

    /// Noise bandwidth of the smoother, Hz (one-sided).
    pub fn enbw(&self, sample_rate: f64) -> f64 {
        // Σ h² = a² / (1 − (1−a)²) = a / (2 − a)
        self.a / (2.0 - self.a) * sample_rate / 2.0
    }
}
