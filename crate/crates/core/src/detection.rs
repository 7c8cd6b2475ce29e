//! Everything between the output coupler and the recorded variance: loss
//! chain, homodyne projection, detector imperfections and Stokes polarimetry.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{check_non_negative, check_positive, invalid, Error, Result};
use crate::opo::SPEED_OF_LIGHT;
use crate::series::TimeSeries;
use crate::spectrum::{Spectrum, SpectrumUnit};

pub const PLANCK: f64 = 6.626_070_15e-34;

pub fn to_db(v: f64) -> Result<f64> {
    if !(v > 0.0) {
        return Err(Error::NonPositive(v));
    }
    Ok(10.0 * v.log10())
}

pub fn from_db(x_db: f64) -> f64 {
    10f64.powf(x_db / 10.0)
}

/// Stage efficiencies of the detection chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct EfficiencyBudget {
    pub quantum_efficiency: f64,
    pub escape_efficiency: f64,
    pub propagation_efficiency: f64,
    pub visibility: f64,
    /// Set when the variances already come from a lossy cavity model, so the
    /// escape factor must not be applied a second time.
    #[serde(default)]
    pub escape_included_upstream: bool,
}

impl EfficiencyBudget {
    /// 95 % photodiode, 96.6 % escape, 99 % propagation, 99.7 % visibility.
    pub fn lab() -> Self {
        Self {
            quantum_efficiency: 0.95,
            escape_efficiency: 0.966,
            propagation_efficiency: 0.99,
            visibility: 0.997,
            escape_included_upstream: false,
        }
    }

    pub fn unity() -> Self {
        Self {
            quantum_efficiency: 1.0,
            escape_efficiency: 1.0,
            propagation_efficiency: 1.0,
            visibility: 1.0,
            escape_included_upstream: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("quantum_efficiency", self.quantum_efficiency),
            ("escape_efficiency", self.escape_efficiency),
            ("propagation_efficiency", self.propagation_efficiency),
            ("visibility", self.visibility),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(invalid(name, format!("{v} is not in (0, 1]")));
            }
        }
        Ok(())
    }
}

/// `η = qe·esc·prop·vis²`, dropping `esc` when it is already upstream.
pub fn total_efficiency(budget: &EfficiencyBudget) -> f64 {
    let esc = if budget.escape_included_upstream {
        1.0
    } else {
        budget.escape_efficiency
    };
    budget.quantum_efficiency * esc * budget.propagation_efficiency * budget.visibility * budget.visibility
}

/// Best squeezing a chain of efficiency `eta` can show, in dB (`-inf` at η = 1).
pub fn detection_bound_db(eta: f64) -> f64 {
    10.0 * (1.0 - eta).log10()
}

/// Beamsplitter loss: `η·V + (1 − η)`.
pub fn apply_loss(v: f64, eta: f64) -> f64 {
    eta * v + (1.0 - eta)
}

/// Quadrature variance at LO phase `theta`; `theta = 0` reads the squeezed branch.
pub fn homodyne_variance(v_plus: f64, v_minus: f64, theta: f64) -> f64 {
    let (s, c) = theta.sin_cos();
    v_plus * s * s + v_minus * c * c
}

pub fn dark_noise_variance(dark_rel_db: f64) -> f64 {
    from_db(-dark_rel_db)
}

pub fn add_dark_noise(v: f64, dark_rel_db: f64) -> f64 {
    v + dark_noise_variance(dark_rel_db)
}

pub fn subtract_dark_noise(v: f64, dark_rel_db: f64) -> Result<f64> {
    let out = v - dark_noise_variance(dark_rel_db);
    if out < 0.0 {
        return Err(Error::OverSubtraction { value: out });
    }
    Ok(out)
}

/// Variance added to the difference signal by LO classical noise
/// (`lo_noise_db` above shot noise) through a finite CMRR.
pub fn cmrr_leakage(lo_noise_db: &Spectrum, cmrr_db: f64) -> Result<Spectrum> {
    if !(cmrr_db >= 0.0) {
        return Err(invalid("cmrr_db", format!("{cmrr_db} must be >= 0")));
    }
    let values = lo_noise_db
        .values()
        .iter()
        .map(|l| leakage_variance(*l, cmrr_db))
        .collect();
    Spectrum::new(lo_noise_db.frequencies().to_vec(), values, 1.0, SpectrumUnit::Variance)
}

pub fn leakage_variance(lo_noise_db: f64, cmrr_db: f64) -> f64 {
    from_db(lo_noise_db - cmrr_db)
}

/// Single-pole LO excess noise: `level_db − 10·log10(1 + (f/corner)²)` above
/// shot noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct LoClassicalNoise {
    #[serde(with = "crate::serde_ext")]
    #[schemars(with = "crate::serde_ext::ExtendedF64")]
    pub level_db: f64,
    pub corner_hz: f64,
}

impl LoClassicalNoise {
    pub fn none() -> Self {
        Self {
            level_db: f64::NEG_INFINITY,
            corner_hz: 1.0,
        }
    }

    pub fn db_at(&self, f: f64) -> f64 {
        self.level_db - 10.0 * (1.0 + (f / self.corner_hz).powi(2)).log10()
    }

    /// dB-valued spectrum on `grid` (`-inf` clipped to -400 dB).
    pub fn to_spectrum_db(&self, grid: &[f64]) -> Vec<f64> {
        grid.iter().map(|&f| self.db_at(f).max(-400.0)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct DetectorModel {
    /// Electronic dark noise, dB below shot noise (stored as a magnitude).
    #[serde(with = "crate::serde_ext")]
    #[schemars(with = "crate::serde_ext::ExtendedF64")]
    pub dark_noise_rel_db: f64,
    pub cmrr_db: f64,
    /// W
    pub saturation_power: f64,
    pub lo_classical_noise: LoClassicalNoise,
    /// Stray coherent field beating with the LO, √Hz in shot-noise units.
    /// It turns phase motion into a signal in the difference current.
    #[serde(default)]
    pub parasitic_coherent_amplitude: f64,
}

impl DetectorModel {
    pub fn lab() -> Self {
        Self {
            dark_noise_rel_db: 16.0,
            cmrr_db: 45.0,
            saturation_power: 2.0e-3,
            lo_classical_noise: LoClassicalNoise::none(),
            parasitic_coherent_amplitude: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cmrr_db >= 0.0) {
            return Err(invalid("cmrr_db", "must be >= 0"));
        }
        if !(self.dark_noise_rel_db >= 0.0) && self.dark_noise_rel_db != f64::INFINITY {
            return Err(invalid("dark_noise_rel_db", "must be >= 0"));
        }
        check_positive("saturation_power", self.saturation_power)?;
        check_positive("lo_classical_noise.corner_hz", self.lo_classical_noise.corner_hz)?;
        check_non_negative("parasitic_coherent_amplitude", self.parasitic_coherent_amplitude)?;
        Ok(())
    }

    pub fn dark_variance(&self) -> f64 {
        dark_noise_variance(self.dark_noise_rel_db)
    }

    pub fn leakage_at(&self, f: f64) -> f64 {
        leakage_variance(self.lo_classical_noise.db_at(f), self.cmrr_db)
    }

    /// Relabel frequencies by `factor`. The coherent amplitude converts a
    /// phase PSD (rad²/Hz) into variance; that PSD scales as 1/factor, so
    /// the amplitude carries √factor.
    pub fn frequency_scaled(&self, factor: f64) -> Self {
        let mut d = *self;
        d.lo_classical_noise.corner_hz *= factor;
        d.parasitic_coherent_amplitude *= factor.sqrt();
        d
    }
}

/// Static prediction of the detected quadrature variance at LO phase `theta`:
/// loss, CMRR leakage and (optionally) dark noise on top of the cavity output.
pub fn detected_variance(
    v_plus: f64,
    v_minus: f64,
    theta: f64,
    eta: f64,
    detector: &DetectorModel,
    frequency_hz: f64,
    include_dark: bool,
) -> f64 {
    let mut v = apply_loss(homodyne_variance(v_plus, v_minus, theta), eta) + detector.leakage_at(frequency_hz);
    if include_dark {
        v += detector.dark_variance();
    }
    v
}

/// Mean and variance of the three Stokes operators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StokesState {
    /// ⟨S1⟩, ⟨S2⟩, ⟨S3⟩ in photons/s.
    pub mean_s: [f64; 3],
    /// V(S1), V(S2), V(S3) in photons/s.
    pub var_s: [f64; 3],
    /// Variances relative to a coherent state of the same flux.
    pub var_s_normalized: [f64; 3],
    pub lo_photon_flux: f64,
}

impl StokesState {
    /// `V(S2)·V(S3)` in shot-noise units; ≥ 1 for physical states.
    pub fn normalized_uncertainty_product(&self) -> f64 {
        self.var_s_normalized[1] * self.var_s_normalized[2]
    }
}

pub fn photon_flux(power: f64, wavelength: f64) -> f64 {
    power * wavelength / (PLANCK * SPEED_OF_LIGHT)
}

/// Bright x-polarized LO plus a squeezed vacuum in y. `S2` reads the quadrature
/// at `theta_lock`, `S3` the conjugate one, `S1` stays coherent.
pub fn stokes_state(
    lo_power: f64,
    wavelength: f64,
    v_plus: f64,
    v_minus: f64,
    theta_lock: f64,
    detector: &DetectorModel,
) -> Result<StokesState> {
    check_non_negative("lo_power", lo_power)?;
    check_positive("wavelength", wavelength)?;
    check_non_negative("v_plus", v_plus)?;
    check_non_negative("v_minus", v_minus)?;
    if lo_power > detector.saturation_power {
        return Err(Error::Saturation {
            power: lo_power,
            saturation: detector.saturation_power,
        });
    }
    if v_plus * v_minus < 1.0 - 1e-12 {
        return Err(invalid(
            "v_plus",
            format!("v_plus·v_minus = {} violates the uncertainty floor", v_plus * v_minus),
        ));
    }
    let n = photon_flux(lo_power, wavelength);
    let norm = [
        1.0,
        homodyne_variance(v_plus, v_minus, theta_lock),
        homodyne_variance(v_plus, v_minus, theta_lock + std::f64::consts::FRAC_PI_2),
    ];
    Ok(StokesState {
        mean_s: [n, 0.0, 0.0],
        var_s: norm.map(|v| v * n),
        var_s_normalized: norm,
        lo_photon_flux: n,
    })
}

/// HWP-at-22.5° + PBS difference current, `2·(A + δx)·y`.
pub fn polarimeter_signal(x_pol: &TimeSeries, y_pol: &TimeSeries, lo_amplitude: f64) -> Result<TimeSeries> {
    if x_pol.sample_rate() != y_pol.sample_rate() {
        return Err(Error::MismatchedSampleRate {
            a: x_pol.sample_rate(),
            b: y_pol.sample_rate(),
        });
    }
    if x_pol.len() != y_pol.len() {
        return Err(invalid(
            "y_pol",
            format!("length {} differs from x_pol length {}", y_pol.len(), x_pol.len()),
        ));
    }
    let diff = x_pol
        .samples()
        .iter()
        .zip(y_pol.samples())
        .map(|(x, y)| 2.0 * (lo_amplitude + x) * y)
        .collect();
    TimeSeries::new(y_pol.sample_rate(), y_pol.start_time(), diff)
}

/// Mix a quadrature stream (vacuum = unit variance) with fresh vacuum on a
/// beamsplitter of transmission `eta`.
pub fn apply_loss_series(series: &TimeSeries, eta: f64, seed: u64) -> Result<TimeSeries> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(invalid("eta", format!("{eta} is not in [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a, b) = (eta.sqrt(), (1.0 - eta).sqrt());
    let out = series
        .samples()
        .iter()
        .map(|x| {
            let v: f64 = StandardNormal.sample(&mut rng);
            a * x + b * v
        })
        .collect();
    TimeSeries::new(series.sample_rate(), series.start_time(), out)
}

/// Noise ellipsoid on the quantum Poincaré sphere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoincareEllipsoid {
    pub center: [f64; 3],
    pub semi_axes: [f64; 3],
    pub normalized: bool,
}

/// With `normalized`, the center is the unit Stokes direction and the axes are
/// √ of the shot-noise-normalized variances (a coherent state is a unit ball).
/// Otherwise both are in photons/s.
pub fn poincare_ellipsoid(state: &StokesState, normalized: bool) -> PoincareEllipsoid {
    if normalized {
        let n = state.lo_photon_flux;
        let center = if n > 0.0 {
            state.mean_s.map(|m| m / n)
        } else {
            [0.0; 3]
        };
        PoincareEllipsoid {
            center,
            semi_axes: state.var_s_normalized.map(f64::sqrt),
            normalized,
        }
    } else {
        PoincareEllipsoid {
            center: state.mean_s,
            semi_axes: state.var_s.map(f64::sqrt),
            normalized,
        }
    }
}
