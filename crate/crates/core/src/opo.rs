//! Frequency-domain output variances of a sub-threshold OPO.
//!
//! Every spectrum is normalized so that vacuum is 1. Angular frequencies are
//! in rad/s internally; grids handed in from outside are in Hz.
//!
//! Branch convention: [`Branch::Plus`] is the anti-squeezed quadrature (its
//! denominator vanishes at threshold), [`Branch::Minus`] the squeezed one. The
//! two-entry selectors of the coupling coefficients (`[3; 1]` for the
//! pump-depletion term of `D`, `[0; 1]` for detuning) put the top entry on the
//! plus branch.

use std::f64::consts::PI;

use num_complex::Complex64;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{check_fraction_open, check_non_negative, check_positive, invalid, Error, Result};
use crate::exec::Execution;
use crate::spectrum::{check_grid, Spectrum, SpectrumUnit};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Plus,
    Minus,
}

impl Branch {
    pub const BOTH: [Branch; 2] = [Branch::Plus, Branch::Minus];

    /// `+1` for plus, `-1` for minus: the sign carried by `∓εβ` is the negative of this.
    fn sign(self) -> f64 {
        match self {
            Branch::Plus => 1.0,
            Branch::Minus => -1.0,
        }
    }
}

/// A value per quadrature branch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize, JsonSchema)]
pub struct QuadPair<T> {
    pub plus: T,
    pub minus: T,
}

impl<T> QuadPair<T> {
    pub fn new(plus: T, minus: T) -> Self {
        Self { plus, minus }
    }

    pub fn get(&self, branch: Branch) -> &T {
        match branch {
            Branch::Plus => &self.plus,
            Branch::Minus => &self.minus,
        }
    }

    pub fn map<U>(self, mut f: impl FnMut(T) -> U) -> QuadPair<U> {
        QuadPair {
            plus: f(self.plus),
            minus: f(self.minus),
        }
    }
}

impl<T: Clone> QuadPair<T> {
    pub fn splat(v: T) -> Self {
        Self {
            plus: v.clone(),
            minus: v,
        }
    }
}

/// Bow-tie cavity description: round-trip length and the power fractions
/// leaving through each port per round trip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CavityGeometry {
    pub round_trip_length: f64,
    pub output_coupler_transmission: f64,
    pub input_coupler_transmission: f64,
    pub intracavity_loss: f64,
    pub pump_input_transmission: f64,
}

impl CavityGeometry {
    /// 600 mm bow-tie, 11.5 % output coupler, 0.4 % round-trip loss, no
    /// fundamental input port. The pump coupling is not specified for the
    /// single-pass pump; 0.5 only sets the scale of the `α ≠ 0` terms.
    pub fn lab_opo() -> Self {
        Self {
            round_trip_length: 0.6,
            output_coupler_transmission: 0.115,
            input_coupler_transmission: 0.0,
            intracavity_loss: 0.004,
            pump_input_transmission: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_positive("round_trip_length", self.round_trip_length)?;
        check_fraction_open("output_coupler_transmission", self.output_coupler_transmission)?;
        check_fraction_open("input_coupler_transmission", self.input_coupler_transmission)?;
        check_fraction_open("intracavity_loss", self.intracavity_loss)?;
        check_fraction_open("pump_input_transmission", self.pump_input_transmission)?;
        if self.output_coupler_transmission == 0.0 {
            return Err(invalid("output_coupler_transmission", "must be > 0"));
        }
        if self.pump_input_transmission == 0.0 {
            return Err(invalid("pump_input_transmission", "must be > 0"));
        }
        let total = self.output_coupler_transmission
            + self.input_coupler_transmission
            + self.intracavity_loss;
        if total >= 1.0 {
            return Err(invalid(
                "output_coupler_transmission",
                format!("T_out + T_in + L_rt = {total} must be < 1"),
            ));
        }
        Ok(())
    }

    pub fn escape_efficiency(&self) -> f64 {
        self.output_coupler_transmission
            / (self.output_coupler_transmission
                + self.input_coupler_transmission
                + self.intracavity_loss)
    }
}

/// Amplitude decay rates in rad/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayRates {
    pub kappa_out_a: f64,
    pub kappa_in_a: f64,
    pub kappa_l_a: f64,
    pub kappa_in_b: f64,
    pub kappa_b: f64,
}

impl DecayRates {
    pub fn kappa_a(&self) -> f64 {
        self.kappa_out_a + self.kappa_in_a + self.kappa_l_a
    }

    pub fn escape_efficiency(&self) -> f64 {
        self.kappa_out_a / self.kappa_a()
    }

    /// Every rate multiplied by `factor` (desk-scale conversion).
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            kappa_out_a: self.kappa_out_a * factor,
            kappa_in_a: self.kappa_in_a * factor,
            kappa_l_a: self.kappa_l_a * factor,
            kappa_in_b: self.kappa_in_b * factor,
            kappa_b: self.kappa_b * factor,
        }
    }
}

/// `κ_i = c·T_i / (2·L_roundtrip)` for every port.
pub fn decay_rates_from_geometry(geometry: &CavityGeometry) -> Result<DecayRates> {
    geometry.validate()?;
    let rate = |t: f64| SPEED_OF_LIGHT * t / (2.0 * geometry.round_trip_length);
    let kappa_in_b = rate(geometry.pump_input_transmission);
    Ok(DecayRates {
        kappa_out_a: rate(geometry.output_coupler_transmission),
        kappa_in_a: rate(geometry.input_coupler_transmission),
        kappa_l_a: rate(geometry.intracavity_loss),
        kappa_in_b,
        kappa_b: kappa_in_b,
    })
}

/// Full parameter set of the variance model. Construction enforces the
/// below-threshold regime `εβ < κ_a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CavityParams {
    kappa_out_a: f64,
    kappa_in_a: f64,
    kappa_l_a: f64,
    kappa_a: f64,
    kappa_b: f64,
    kappa_in_b: f64,
    epsilon: f64,
    beta: f64,
    alpha: f64,
}

impl CavityParams {
    pub fn new(rates: DecayRates, epsilon: f64, beta: f64, alpha: f64) -> Result<Self> {
        check_positive("kappa_out_a", rates.kappa_out_a)?;
        check_non_negative("kappa_in_a", rates.kappa_in_a)?;
        check_non_negative("kappa_l_a", rates.kappa_l_a)?;
        check_non_negative("kappa_in_b", rates.kappa_in_b)?;
        check_positive("kappa_b", rates.kappa_b)?;
        check_non_negative("epsilon", epsilon)?;
        check_non_negative("beta", beta)?;
        if !alpha.is_finite() {
            return Err(invalid("alpha", "must be finite"));
        }
        let p = Self {
            kappa_out_a: rates.kappa_out_a,
            kappa_in_a: rates.kappa_in_a,
            kappa_l_a: rates.kappa_l_a,
            kappa_a: rates.kappa_a(),
            kappa_b: rates.kappa_b,
            kappa_in_b: rates.kappa_in_b,
            epsilon,
            beta,
            alpha,
        };
        p.check_threshold()?;
        Ok(p)
    }

    /// Unit nonlinear coupling with the pump amplitude set so that `εβ = gain`.
    pub fn with_gain(rates: DecayRates, gain: f64, alpha: f64) -> Result<Self> {
        Self::new(rates, 1.0, gain, alpha)
    }

    /// Single-ended lossless cavity (`κ_in^a = κ_l^a = 0`), vacuum seed,
    /// gain `ratio·κ`.
    pub fn single_ended(kappa: f64, ratio: f64) -> Result<Self> {
        let rates = DecayRates {
            kappa_out_a: kappa,
            kappa_in_a: 0.0,
            kappa_l_a: 0.0,
            kappa_in_b: kappa,
            kappa_b: kappa,
        };
        Self::with_gain(rates, ratio * kappa, 0.0)
    }

    fn check_threshold(&self) -> Result<()> {
        let g = self.gain();
        if !(g < self.kappa_a) {
            return Err(Error::AboveThreshold {
                gain: g,
                kappa_a: self.kappa_a,
            });
        }
        Ok(())
    }

    /// Same cavity, different parametric gain `εβ`.
    pub fn with_gain_value(&self, gain: f64) -> Result<Self> {
        let epsilon = if self.epsilon > 0.0 { self.epsilon } else { 1.0 };
        Self::new(self.rates(), epsilon, gain / epsilon, self.alpha)
    }

    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        Self::new(self.rates(), self.epsilon, self.beta, alpha)
    }

    pub fn rates(&self) -> DecayRates {
        DecayRates {
            kappa_out_a: self.kappa_out_a,
            kappa_in_a: self.kappa_in_a,
            kappa_l_a: self.kappa_l_a,
            kappa_in_b: self.kappa_in_b,
            kappa_b: self.kappa_b,
        }
    }

    /// Rates and gain multiplied by `factor`; coupling and amplitudes kept.
    /// Result differs from the original only on the frequency axis.
    pub fn frequency_scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.rates().scaled(factor),
            self.epsilon * factor,
            self.beta,
            self.alpha,
        )
    }

    pub fn kappa_out_a(&self) -> f64 {
        self.kappa_out_a
    }
    pub fn kappa_in_a(&self) -> f64 {
        self.kappa_in_a
    }
    pub fn kappa_l_a(&self) -> f64 {
        self.kappa_l_a
    }
    pub fn kappa_a(&self) -> f64 {
        self.kappa_a
    }
    pub fn kappa_b(&self) -> f64 {
        self.kappa_b
    }
    pub fn kappa_in_b(&self) -> f64 {
        self.kappa_in_b
    }
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Parametric gain rate `εβ` in rad/s.
    pub fn gain(&self) -> f64 {
        self.epsilon * self.beta
    }

    pub fn gain_ratio(&self) -> f64 {
        self.gain() / self.kappa_a
    }

    pub fn escape_efficiency(&self) -> f64 {
        self.kappa_out_a / self.kappa_a
    }
}

/// An input noise spectrum, dimensionless (vacuum = 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(untagged)]
pub enum NoiseSpectrum {
    Constant(f64),
    /// Piecewise-linear in frequency, clamped outside the table.
    Table {
        frequencies_hz: Vec<f64>,
        values: Vec<f64>,
    },
}

impl NoiseSpectrum {
    pub fn at_hz(&self, f: f64) -> f64 {
        match self {
            NoiseSpectrum::Constant(v) => *v,
            NoiseSpectrum::Table {
                frequencies_hz,
                values,
            } => {
                let i = frequencies_hz.partition_point(|&x| x <= f);
                if i == 0 {
                    values[0]
                } else if i == frequencies_hz.len() {
                    values[values.len() - 1]
                } else {
                    let (f0, f1) = (frequencies_hz[i - 1], frequencies_hz[i]);
                    let t = (f - f0) / (f1 - f0);
                    values[i - 1] + t * (values[i] - values[i - 1])
                }
            }
        }
    }

    pub fn at_omega(&self, omega: f64) -> f64 {
        match self {
            NoiseSpectrum::Constant(v) => *v,
            _ => self.at_hz(omega.abs() / (2.0 * PI)),
        }
    }

    pub fn as_constant(&self) -> Option<f64> {
        match self {
            NoiseSpectrum::Constant(v) => Some(*v),
            _ => None,
        }
    }

    pub fn validate(&self, name: &'static str) -> Result<()> {
        match self {
            NoiseSpectrum::Constant(v) => check_non_negative(name, *v),
            NoiseSpectrum::Table {
                frequencies_hz,
                values,
            } => {
                if frequencies_hz.is_empty() || frequencies_hz.len() != values.len() {
                    return Err(invalid(name, "table needs matching, non-empty columns"));
                }
                check_grid(frequencies_hz).map_err(|_| invalid(name, "table grid must be strictly increasing"))?;
                for v in values {
                    check_non_negative(name, *v)?;
                }
                Ok(())
            }
        }
    }

    /// Frequency axis multiplied by `factor`.
    pub fn frequency_scaled(&self, factor: f64) -> Self {
        match self {
            NoiseSpectrum::Constant(v) => NoiseSpectrum::Constant(*v),
            NoiseSpectrum::Table {
                frequencies_hz,
                values,
            } => NoiseSpectrum::Table {
                frequencies_hz: frequencies_hz.iter().map(|f| f * factor).collect(),
                values: values.clone(),
            },
        }
    }
}

/// The five input spectra of the variance model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct NoiseInputs {
    pub v_seed: QuadPair<NoiseSpectrum>,
    pub v_loss: QuadPair<NoiseSpectrum>,
    pub v_vac: QuadPair<NoiseSpectrum>,
    pub v_pump: QuadPair<NoiseSpectrum>,
    pub v_detuning: NoiseSpectrum,
}

impl Default for NoiseInputs {
    fn default() -> Self {
        let vac = QuadPair::splat(NoiseSpectrum::Constant(1.0));
        Self {
            v_seed: vac.clone(),
            v_loss: vac.clone(),
            v_vac: vac.clone(),
            v_pump: vac,
            v_detuning: NoiseSpectrum::Constant(0.0),
        }
    }
}

impl NoiseInputs {
    pub fn validate(&self) -> Result<()> {
        for (name, pair) in [
            ("v_seed", &self.v_seed),
            ("v_loss", &self.v_loss),
            ("v_vac", &self.v_vac),
            ("v_pump", &self.v_pump),
        ] {
            pair.plus.validate(name)?;
            pair.minus.validate(name)?;
        }
        self.v_detuning.validate("v_detuning")
    }

    fn is_vacuum_at(&self, omega: f64) -> bool {
        [&self.v_seed, &self.v_loss, &self.v_vac]
            .iter()
            .all(|p| p.plus.at_omega(omega) == 1.0 && p.minus.at_omega(omega) == 1.0)
    }

    pub fn frequency_scaled(&self, factor: f64) -> Self {
        let s = |p: &QuadPair<NoiseSpectrum>| {
            QuadPair::new(p.plus.frequency_scaled(factor), p.minus.frequency_scaled(factor))
        };
        Self {
            v_seed: s(&self.v_seed),
            v_loss: s(&self.v_loss),
            v_vac: s(&self.v_vac),
            v_pump: s(&self.v_pump),
            v_detuning: self.v_detuning.frequency_scaled(factor),
        }
    }
}

/// `D±(ω) = iω + κ_a + b±·ε²α²/(2κ_b) ∓ εβ` with `b+ = 3`, `b− = 1`.
pub fn denominator(params: &CavityParams, omega: f64, branch: Branch) -> Complex64 {
    let depletion = match branch {
        Branch::Plus => 3.0,
        Branch::Minus => 1.0,
    };
    let e2a2 = params.epsilon * params.epsilon * params.alpha * params.alpha;
    let re = params.kappa_a + depletion * e2a2 / (2.0 * params.kappa_b) - branch.sign() * params.gain();
    Complex64::new(re, omega)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Couplings {
    pub c_s: f64,
    pub c_l: f64,
    pub c_v: QuadPair<f64>,
    pub c_p: f64,
    pub c_delta: QuadPair<f64>,
}

pub fn coupling_coefficients(params: &CavityParams, omega: f64) -> Couplings {
    let ko = params.kappa_out_a;
    let cv = |b| (Complex64::new(2.0 * ko, 0.0) - denominator(params, omega, b)).norm_sqr();
    let ratio = params.epsilon / params.kappa_b;
    Couplings {
        c_s: 4.0 * params.kappa_in_a * ko,
        c_l: 4.0 * params.kappa_l_a * ko,
        c_v: QuadPair::new(cv(Branch::Plus), cv(Branch::Minus)),
        c_p: 4.0 * ko * params.kappa_in_b * ratio * ratio,
        c_delta: QuadPair::new(0.0, 8.0 * ko),
    }
}

/// Output variance of one quadrature at angular frequency `omega`.
pub fn output_variance(
    params: &CavityParams,
    noise: &NoiseInputs,
    omega: f64,
    branch: Branch,
) -> Result<f64> {
    params.check_threshold()?;
    if params.gain() == 0.0 && params.alpha == 0.0 && noise.is_vacuum_at(omega) {
        return Ok(1.0);
    }
    let c = coupling_coefficients(params, omega);
    let sel = |p: &QuadPair<NoiseSpectrum>| p.get(branch).at_omega(omega);
    let a2 = params.alpha * params.alpha;
    let numerator = c.c_s * sel(&noise.v_seed)
        + c.c_l * sel(&noise.v_loss)
        + c.c_v.get(branch) * sel(&noise.v_vac)
        + a2 * (c.c_p * sel(&noise.v_pump) + c.c_delta.get(branch) * noise.v_detuning.at_omega(omega));
    let d2 = denominator(params, omega, branch).norm_sqr();
    let v = numerator / d2;
    if !v.is_finite() {
        return Err(Error::AboveThreshold {
            gain: params.gain(),
            kappa_a: params.kappa_a,
        });
    }
    Ok(v)
}

pub fn output_variances(params: &CavityParams, noise: &NoiseInputs, omega: f64) -> Result<QuadPair<f64>> {
    Ok(QuadPair::new(
        output_variance(params, noise, omega, Branch::Plus)?,
        output_variance(params, noise, omega, Branch::Minus)?,
    ))
}

/// Both branches swept over a Hz grid, reference level 1 (vacuum).
pub fn variance_spectrum(
    params: &CavityParams,
    noise: &NoiseInputs,
    frequency_grid: &[f64],
    exec: Execution,
) -> Result<QuadPair<Spectrum>> {
    check_grid(frequency_grid)?;
    noise.validate()?;
    let rows = exec.try_map(frequency_grid, |&f| output_variances(params, noise, 2.0 * PI * f))?;
    let build = |pick: fn(&QuadPair<f64>) -> f64| {
        Spectrum::new(
            frequency_grid.to_vec(),
            rows.iter().map(pick).collect(),
            1.0,
            SpectrumUnit::Variance,
        )
    };
    Ok(QuadPair::new(build(|r| r.plus)?, build(|r| r.minus)?))
}

/// Options for [`fit_pump_gain`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Analysis frequency of the measured anti-squeezing, Hz.
    pub analysis_frequency_hz: f64,
    /// Largest admissible pump power as a fraction of threshold power
    /// (`(εβ/κ_a)²`). Fits that need more are reported unreachable.
    pub max_pump_fraction: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            analysis_frequency_hz: 0.0,
            max_pump_fraction: 0.8,
        }
    }
}

/// Invert the detected anti-squeezing for the parametric gain `εβ`.
///
/// Solves `η·V+(ω; g) + (1 − η) = 10^(dB/10)` by bisection on
/// `g ∈ (0, κ_a·√max_pump_fraction]`.
pub fn fit_pump_gain(
    measured_antisqueezing_db: f64,
    eta: f64,
    template: &CavityParams,
    noise: &NoiseInputs,
    opts: FitOptions,
) -> Result<f64> {
    if !(measured_antisqueezing_db.is_finite() && measured_antisqueezing_db > 0.0) {
        return Err(invalid(
            "measured_antisqueezing_db",
            format!("{measured_antisqueezing_db} dB must be > 0"),
        ));
    }
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(invalid("eta", format!("{eta} is not in (0, 1]")));
    }
    if !(opts.max_pump_fraction > 0.0 && opts.max_pump_fraction < 1.0) {
        return Err(invalid("max_pump_fraction", "must be in (0, 1)"));
    }
    let target = 10f64.powf(measured_antisqueezing_db / 10.0);
    let omega = 2.0 * PI * opts.analysis_frequency_hz;
    let max_ratio = opts.max_pump_fraction.sqrt();
    let kappa = template.kappa_a();
    let residual = |g: f64| -> Result<f64> {
        let p = template.with_gain_value(g)?;
        Ok(eta * output_variance(&p, noise, omega, Branch::Plus)? + (1.0 - eta) - target)
    };
    let mut lo = 0.0;
    let mut hi = max_ratio * kappa;
    if residual(hi)? < 0.0 {
        return Err(Error::UnreachableAntiSqueezing {
            target_db: measured_antisqueezing_db,
            eta,
            max_ratio,
        });
    }
    if residual(lo)? >= 0.0 {
        return Err(Error::UnreachableAntiSqueezing {
            target_db: measured_antisqueezing_db,
            eta,
            max_ratio,
        });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if residual(mid)? < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const K: f64 = 1.0e7;

    #[test]
    fn escape_efficiency_matches_ratio_of_transmissions() {
        let rates = decay_rates_from_geometry(&CavityGeometry::lab_opo()).unwrap();
        assert_relative_eq!(rates.escape_efficiency(), 0.115 / 0.119, max_relative = 1e-12);
        assert_relative_eq!(rates.kappa_out_a, SPEED_OF_LIGHT * 0.115 / 1.2, max_relative = 1e-12);
        assert!((rates.kappa_out_a - 2.873e7).abs() < 0.001e7);
        assert_eq!(rates.kappa_a(), rates.kappa_out_a + rates.kappa_in_a + rates.kappa_l_a);
    }

    #[test]
    fn lossless_single_ended_escape_is_one() {
        let g = CavityGeometry {
            intracavity_loss: 0.0,
            ..CavityGeometry::lab_opo()
        };
        assert_eq!(decay_rates_from_geometry(&g).unwrap().escape_efficiency(), 1.0);
    }

    #[test]
    fn geometry_rejects_bad_fractions() {
        let base = CavityGeometry::lab_opo();
        for g in [
            CavityGeometry { output_coupler_transmission: 1.0, ..base },
            CavityGeometry { intracavity_loss: -0.1, ..base },
            CavityGeometry { round_trip_length: 0.0, ..base },
            CavityGeometry { output_coupler_transmission: 0.6, input_coupler_transmission: 0.5, ..base },
        ] {
            assert!(decay_rates_from_geometry(&g).is_err(), "{g:?}");
        }
    }

    #[test]
    fn denominator_limits() {
        let p = CavityParams::single_ended(K, 0.0).unwrap();
        assert_eq!(denominator(&p, 0.0, Branch::Plus), Complex64::new(K, 0.0));
        assert_eq!(denominator(&p, 0.0, Branch::Minus), Complex64::new(K, 0.0));

        let p = CavityParams::single_ended(K, 0.4).unwrap();
        let d = denominator(&p, K, Branch::Minus);
        assert_relative_eq!(d.re, 1.4 * K, max_relative = 1e-12);
        assert_relative_eq!(d.im, K, max_relative = 1e-12);
    }

    #[test]
    fn threshold_is_rejected_at_construction() {
        assert!(matches!(
            CavityParams::single_ended(K, 1.0),
            Err(Error::AboveThreshold { .. })
        ));
        assert!(CavityParams::single_ended(K, 1.2).is_err());
    }

    #[test]
    fn depletion_factor_three_on_plus_branch() {
        let rates = DecayRates { kappa_out_a: K, kappa_in_a: 0.0, kappa_l_a: 0.0, kappa_in_b: 2.0 * K, kappa_b: 2.0 * K };
        let p = CavityParams::new(rates, 1.0, 0.0, 1000.0).unwrap();
        let extra = 1.0e6 / (4.0 * K);
        assert_relative_eq!(denominator(&p, 0.0, Branch::Plus).re, K + 3.0 * extra, max_relative = 1e-12);
        assert_relative_eq!(denominator(&p, 0.0, Branch::Minus).re, K + extra, max_relative = 1e-12);
    }

    #[test]
    fn couplings_closed_forms() {
        let p = CavityParams::single_ended(K, 0.3).unwrap();
        let c = coupling_coefficients(&p, 0.0);
        assert_eq!(c.c_s, 0.0);
        assert_eq!(c.c_delta.plus, 0.0);
        assert_relative_eq!(c.c_delta.minus, 8.0 * K);
        assert_relative_eq!(c.c_v.plus, (1.3 * K) * (1.3 * K), max_relative = 1e-12);
        assert_relative_eq!(c.c_v.minus, (0.7 * K) * (0.7 * K), max_relative = 1e-12);
    }

    #[test]
    fn unpumped_cavity_outputs_vacuum() {
        let rates = decay_rates_from_geometry(&CavityGeometry::lab_opo()).unwrap();
        let p = CavityParams::with_gain(rates, 0.0, 0.0).unwrap();
        for w in [0.0, 1e3, 1e7, 1e9] {
            let v = output_variances(&p, &NoiseInputs::default(), w).unwrap();
            assert_eq!((v.plus, v.minus), (1.0, 1.0));
        }
    }

    #[test]
    fn lossless_closed_form_at_dc() {
        let p = CavityParams::single_ended(K, 0.4).unwrap();
        let v = output_variances(&p, &NoiseInputs::default(), 0.0).unwrap();
        assert_relative_eq!(v.minus, (0.6f64 / 1.4).powi(2), max_relative = 1e-12);
        assert_relative_eq!(v.plus, (1.4f64 / 0.6).powi(2), max_relative = 1e-12);
        assert!((10.0 * v.minus.log10() + 7.36).abs() < 0.01);
    }

    #[test]
    fn lossy_cavity_matches_textbook_lorentzian() {
        // V± = 1 ± 4 g κ_out / ((κ_a ∓ g)² + ω²)
        let rates = decay_rates_from_geometry(&CavityGeometry::lab_opo()).unwrap();
        let ka = rates.kappa_a();
        let g = 0.37 * ka;
        let p = CavityParams::with_gain(rates, g, 0.0).unwrap();
        for w in [0.0, 0.3 * ka, 2.0 * ka] {
            let v = output_variances(&p, &NoiseInputs::default(), w).unwrap();
            let plus = 1.0 + 4.0 * g * rates.kappa_out_a / ((ka - g).powi(2) + w * w);
            let minus = 1.0 - 4.0 * g * rates.kappa_out_a / ((ka + g).powi(2) + w * w);
            assert_relative_eq!(v.plus, plus, max_relative = 1e-12);
            assert_relative_eq!(v.minus, minus, max_relative = 1e-12);
        }
    }

    #[test]
    fn pump_noise_decoupled_for_vacuum_seed() {
        let p = CavityParams::single_ended(K, 0.5).unwrap();
        let base = output_variances(&p, &NoiseInputs::default(), 0.2 * K).unwrap();
        let noisy = NoiseInputs {
            v_pump: QuadPair::splat(NoiseSpectrum::Constant(37.0)),
            v_detuning: NoiseSpectrum::Constant(5.0),
            ..NoiseInputs::default()
        };
        assert_eq!(output_variances(&p, &noisy, 0.2 * K).unwrap(), base);
    }

    #[test]
    fn bright_seed_couples_detuning_only_to_minus_branch() {
        let rates = DecayRates { kappa_out_a: K, kappa_in_a: 0.1 * K, kappa_l_a: 0.0, kappa_in_b: K, kappa_b: K };
        let p = CavityParams::new(rates, 1.0, 0.2 * K, 100.0).unwrap();
        let det = NoiseInputs { v_detuning: NoiseSpectrum::Constant(3.0), ..NoiseInputs::default() };
        let a = output_variances(&p, &NoiseInputs::default(), 0.0).unwrap();
        let b = output_variances(&p, &det, 0.0).unwrap();
        assert_eq!(a.plus, b.plus);
        assert!(b.minus > a.minus);
    }

    #[test]
    fn high_frequency_limit_is_vacuum_port() {
        let rates = decay_rates_from_geometry(&CavityGeometry::lab_opo()).unwrap();
        let p = CavityParams::with_gain(rates, 0.5 * rates.kappa_a(), 0.0).unwrap();
        let noise = NoiseInputs { v_vac: QuadPair::new(NoiseSpectrum::Constant(2.0), NoiseSpectrum::Constant(3.0)), ..NoiseInputs::default() };
        let v = output_variances(&p, &noise, 1e6 * rates.kappa_a()).unwrap();
        assert_relative_eq!(v.plus, 2.0, max_relative = 1e-6);
        assert_relative_eq!(v.minus, 3.0, max_relative = 1e-6);
    }

    #[test]
    fn sweep_single_point_grid_matches_scalar() {
        let p = CavityParams::single_ended(K, 0.4).unwrap();
        let s = variance_spectrum(&p, &NoiseInputs::default(), &[0.0], Execution::Sequential).unwrap();
        let v = output_variances(&p, &NoiseInputs::default(), 0.0).unwrap();
        assert_eq!(s.minus.values()[0], v.minus);
        assert_eq!(s.plus.values()[0], v.plus);
        assert_eq!(s.minus.reference_level(), 1.0);
    }

    #[test]
    fn squeezed_branch_increases_toward_vacuum() {
        let p = CavityParams::single_ended(K, 0.4).unwrap();
        let grid = crate::spectrum::log_grid(1.0, 1e10, 200);
        let s = variance_spectrum(&p, &NoiseInputs::default(), &grid, Execution::Parallel).unwrap();
        assert!(s.minus.values().windows(2).all(|w| w[1] > w[0]));
        assert!((s.minus.values().last().unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn parallel_sweep_is_bit_identical_to_serial() {
        let rates = decay_rates_from_geometry(&CavityGeometry::lab_opo()).unwrap();
        let p = CavityParams::with_gain(rates, 0.4 * rates.kappa_a(), 0.0).unwrap();
        let grid = crate::spectrum::log_grid(10.0, 1e8, 3000);
        let a = variance_spectrum(&p, &NoiseInputs::default(), &grid, Execution::Sequential).unwrap();
        let b = variance_spectrum(&p, &NoiseInputs::default(), &grid, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fit_matches_closed_form_inversion() {
        // Independent route: (1+x)/(1-x) = sqrt(R), x = (sqrt(R)-1)/(sqrt(R)+1)
        let eta = 0.903;
        let r = (10f64.powf(0.7) - (1.0 - eta)) / eta;
        let x = (r.sqrt() - 1.0) / (r.sqrt() + 1.0);
        let template = CavityParams::single_ended(K, 0.0).unwrap();
        let g = fit_pump_gain(7.0, eta, &template, &NoiseInputs::default(), FitOptions::default()).unwrap();
        assert_relative_eq!(g / K, x, max_relative = 1e-9);
        assert!((g / K - 0.400).abs() < 0.001);
    }

    #[test]
    fn fit_tiny_antisqueezing_gives_tiny_gain() {
        let template = CavityParams::single_ended(K, 0.0).unwrap();
        let g = fit_pump_gain(1e-6, 1.0, &template, &NoiseInputs::default(), FitOptions::default()).unwrap();
        assert!(g / K < 1e-6);
    }

    #[test]
    fn fit_reports_unreachable() {
        let template = CavityParams::single_ended(K, 0.0).unwrap();
        let r = fit_pump_gain(7.0, 0.01, &template, &NoiseInputs::default(), FitOptions::default());
        assert!(matches!(r, Err(Error::UnreachableAntiSqueezing { .. })), "{r:?}");
        assert!(fit_pump_gain(-1.0, 0.9, &template, &NoiseInputs::default(), FitOptions::default()).is_err());
        assert!(fit_pump_gain(3.0, 0.0, &template, &NoiseInputs::default(), FitOptions::default()).is_err());
    }

    #[test]
    fn table_spectrum_interpolates_and_clamps() {
        let s = NoiseSpectrum::Table { frequencies_hz: vec![10.0, 20.0], values: vec![1.0, 3.0] };
        assert_eq!(s.at_hz(0.0), 1.0);
        assert_eq!(s.at_hz(15.0), 2.0);
        assert_eq!(s.at_hz(100.0), 3.0);
        assert!(NoiseSpectrum::Constant(-1.0).validate("x").is_err());
    }
}
