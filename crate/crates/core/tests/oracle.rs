//! Worked numbers checked against hand arithmetic, plus the cheap
//! stochastic oracles.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use approx::assert_relative_eq;
use num_complex::Complex64;
use squeezelab::detection::{
    add_dark_noise, apply_loss, homodyne_variance, leakage_variance, photon_flux, poincare_ellipsoid, stokes_state,
    subtract_dark_noise, to_db, total_efficiency, DetectorModel, EfficiencyBudget, PLANCK,
};
use squeezelab::dsp::{welch_psd, Window};
use squeezelab::opo::{
    coupling_coefficients, decay_rates_from_geometry, denominator, fit_pump_gain, output_variances, Branch,
    CavityGeometry, CavityParams, FitOptions, NoiseInputs, SPEED_OF_LIGHT,
};
use squeezelab::stochastic::{
    pzt_response, simulate_output_quadratures, simulate_phase_disturbance, DisturbanceModel, PztResonance, SimConfig,
};
use squeezelab::TimeSeries;

#[test]
fn output_coupler_rate_by_hand() {
    let g = CavityGeometry::lab_opo();
    let r = decay_rates_from_geometry(&g).unwrap();
    assert_relative_eq!(r.kappa_out_a, SPEED_OF_LIGHT * 0.115 / (2.0 * 0.6), max_relative = 1e-12);
    assert_relative_eq!(r.kappa_out_a, 2.873e7, max_relative = 1e-3);
    assert_relative_eq!(r.escape_efficiency(), 0.115 / 0.119, max_relative = 1e-12);
    let lossless = CavityGeometry { intracavity_loss: 0.0, ..g };
    assert_eq!(decay_rates_from_geometry(&lossless).unwrap().escape_efficiency(), 1.0);
}

#[test]
fn denominators_by_substitution() {
    let k = 1e7;
    let p = CavityParams::single_ended(k, 0.4).unwrap();
    let d = denominator(&p, k, Branch::Minus);
    assert!((d - Complex64::new(1.4 * k, k)).norm() < 1e-6 * k);
    let empty = CavityParams::single_ended(k, 0.0).unwrap();
    assert!((denominator(&empty, 0.0, Branch::Plus) - Complex64::new(k, 0.0)).norm() < 1e-9);
    assert!(CavityParams::single_ended(k, 1.0).is_err());
}

#[test]
fn couplings_by_substitution() {
    let k = 1e7;
    let g = 0.3 * k;
    let c = coupling_coefficients(&CavityParams::single_ended(k, 0.3).unwrap(), 0.0);
    assert_relative_eq!(c.c_v.plus, (k + g).powi(2), max_relative = 1e-12);
    assert_relative_eq!(c.c_v.minus, (k - g).powi(2), max_relative = 1e-12);
    assert_eq!(c.c_s, 0.0);
    assert_eq!(c.c_delta.plus, 0.0);
}

#[test]
fn closed_form_variances_at_dc() {
    let p = CavityParams::single_ended(1e7, 0.4).unwrap();
    let v = output_variances(&p, &NoiseInputs::default(), 0.0).unwrap();
    assert_relative_eq!(v.minus, (0.6f64 / 1.4).powi(2), max_relative = 1e-12);
    assert_relative_eq!(v.plus, (1.4f64 / 0.6).powi(2), max_relative = 1e-12);
    assert!((to_db(v.minus).unwrap() + 7.36).abs() < 0.005);
    assert!((v.minus - 0.1837).abs() < 5e-5);
}

#[test]
fn efficiency_products() {
    let b = EfficiencyBudget::lab();
    assert!((total_efficiency(&b) - 0.9031).abs() < 5e-5);
    let unit_vis = EfficiencyBudget { visibility: 1.0, ..b };
    assert!((total_efficiency(&unit_vis) - 0.9085).abs() < 5e-5);
    assert_eq!(total_efficiency(&EfficiencyBudget::unity()), 1.0);
    let upstream = EfficiencyBudget { escape_included_upstream: true, ..b };
    assert_relative_eq!(total_efficiency(&upstream), 0.95 * 0.99 * 0.997 * 0.997, max_relative = 1e-12);
}

#[test]
fn loss_and_dark_noise_arithmetic() {
    let detected = apply_loss(0.1837, 0.903);
    assert!((detected - 0.2629).abs() < 1e-4);
    assert!((to_db(detected).unwrap() + 5.80).abs() < 0.005);
    assert_eq!(apply_loss(1.0, 0.3), 1.0);
    assert_eq!(apply_loss(7.0, 0.0), 1.0);

    let with_dark = add_dark_noise(0.275, 16.0);
    assert!((with_dark - 0.3001).abs() < 1e-4);
    assert!((to_db(with_dark).unwrap() + 5.23).abs() < 0.01);
    assert!((subtract_dark_noise(with_dark, 16.0).unwrap() - 0.275).abs() < 1e-12);
    assert_eq!(add_dark_noise(0.4, f64::INFINITY), 0.4);
    assert!(subtract_dark_noise(0.01, 16.0).is_err());

    assert!((leakage_variance(30.0, 45.0) - 10f64.powf(-1.5)).abs() < 1e-12);
    assert_eq!(leakage_variance(30.0, 30.0), 1.0);
    assert!((to_db(10f64.powf(-0.56)).unwrap() + 5.6).abs() < 1e-12);
    assert!((10f64.powf(-0.56) - 0.2754).abs() < 1e-4);
}

#[test]
fn homodyne_angles() {
    assert_eq!(homodyne_variance(5.0, 0.2, 0.0), 0.2);
    assert_relative_eq!(homodyne_variance(5.0, 0.2, FRAC_PI_2), 5.0, max_relative = 1e-12);
    assert_relative_eq!(homodyne_variance(5.0, 0.2, FRAC_PI_4), 2.6, max_relative = 1e-12);
    // scan between the detected extremes
    let trace: Vec<f64> = (0..400).map(|k| homodyne_variance(5.01, 0.275, 2.0 * PI * k as f64 / 400.0)).collect();
    let (lo, hi) = trace.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
    assert!((to_db(lo).unwrap() + 5.6).abs() < 0.01 && (to_db(hi).unwrap() - 7.0).abs() < 0.01);
}

#[test]
fn pump_fit_by_bisection_of_the_closed_form() {
    let eta = 0.903;
    let p = CavityParams::single_ended(1.0, 0.0).unwrap();
    let g = fit_pump_gain(7.0, eta, &p, &NoiseInputs::default(), FitOptions::default()).unwrap();
    // independent bisection on (1+r)²/(1-r)² = (10^0.7 - 0.097)/0.903
    let target = (10f64.powf(0.7) - 0.097) / 0.903;
    let (mut lo, mut hi) = (0.0f64, 0.99f64);
    for _ in 0..100 {
        let m = 0.5 * (lo + hi);
        if ((1.0 + m) / (1.0 - m)).powi(2) < target {
            lo = m
        } else {
            hi = m
        }
    }
    assert!((g - lo).abs() < 1e-3, "{g} vs {lo}");
    assert!((g - 0.400).abs() < 1e-3);
    assert!(fit_pump_gain(7.0, 0.01, &p, &NoiseInputs::default(), FitOptions::default()).is_err());
    assert!(fit_pump_gain(1e-6, 1.0, &p, &NoiseInputs::default(), FitOptions::default()).unwrap() < 1e-5);
}

#[test]
fn stokes_worked_numbers() {
    let det = DetectorModel::lab();
    let lambda = 795e-9;
    assert_relative_eq!(photon_flux(2e-3, lambda), 2e-3 * lambda / (PLANCK * SPEED_OF_LIGHT), max_relative = 1e-12);
    assert!((photon_flux(2e-3, lambda) - 8.00e15).abs() < 0.01e15);
    let coh = stokes_state(1e-3, lambda, 1.0, 1.0, 0.0, &det).unwrap();
    assert_relative_eq!(coh.var_s_normalized[1], 1.0, max_relative = 1e-12);
    assert_relative_eq!(coh.normalized_uncertainty_product(), 1.0, max_relative = 1e-12);
    let sq = stokes_state(1e-3, lambda, 4.57, 0.525, 0.0, &det).unwrap();
    assert!((sq.normalized_uncertainty_product() - 2.40).abs() < 0.005);
    let e = poincare_ellipsoid(&sq, true);
    assert!(e.semi_axes[1] < e.semi_axes[0] && e.semi_axes[0] < e.semi_axes[2], "{e:?}");
    assert!(stokes_state(5e-3, lambda, 1.0, 1.0, 0.0, &det).is_err());
    let dark = stokes_state(0.0, lambda, 1.0, 1.0, 0.0, &det).unwrap();
    assert_eq!(poincare_ellipsoid(&dark, true).center, [0.0; 3]);
}

fn band_level(ts: &TimeSeries, seg: usize, bins: std::ops::RangeInclusive<usize>) -> f64 {
    let psd = welch_psd(ts, seg, 0.0, Window::Hann).unwrap();
    let n = bins.clone().count() as f64;
    bins.map(|k| psd.values()[k]).sum::<f64>() / n * ts.sample_rate() / 2.0
}

#[test]
fn stochastic_vacuum_and_squeezed_levels() {
    let kappa = 2.0 * PI * 100e3;
    let fs = 4e6;
    let seg = 8192;
    let segs = 300;
    let dur = (seg * segs) as f64 / fs;
    let vac = simulate_output_quadratures(&SimConfig::new(CavityParams::single_ended(kappa, 0.0).unwrap(), dur, fs, 5)).unwrap();
    for b in Branch::BOTH {
        let level = band_level(vac.get(b), seg, 2..=199);
        assert!((10.0 * level.log10()).abs() < 0.1, "{b:?} {level}");
    }
    let sq = simulate_output_quadratures(&SimConfig::new(CavityParams::single_ended(kappa, 0.4).unwrap(), dur, fs, 6)).unwrap();
    // f ≤ 4 kHz ≪ 100 kHz: the Lorentzian has moved by < 0.1 %
    let level = band_level(&sq.minus, seg, 2..=8);
    assert!((10.0 * (level / 0.1837).log10()).abs() < 0.3, "{level}");

    let again = simulate_output_quadratures(&SimConfig::new(CavityParams::single_ended(kappa, 0.4).unwrap(), 0.01, fs, 6)).unwrap();
    let first = simulate_output_quadratures(&SimConfig::new(CavityParams::single_ended(kappa, 0.4).unwrap(), 0.01, fs, 6)).unwrap();
    assert_eq!(again, first);
}

#[test]
fn white_noise_psd_level() {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let x: Vec<f64> = (0..1024 * 400).map(|_| StandardNormal.sample(&mut rng)).collect();
    let psd = welch_psd(&TimeSeries::new(1e6, 0.0, x).unwrap(), 1024, 0.0, Window::Hann).unwrap();
    let v = &psd.values()[4..500];
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    assert!((10.0 * (mean / 2e-6).log10()).abs() < 0.2, "{mean}");
}

#[test]
fn wiener_variance_grows_linearly() {
    let d = 0.5;
    let model = DisturbanceModel { random_walk_diffusion: d, ..DisturbanceModel::quiet(PztResonance { f0: 1e3, quality_factor: 1.0, gain: 1.0, quadratic: 0.0 }) };
    let t = 2.0;
    let finals: Vec<f64> = (0..200)
        .map(|s| *simulate_phase_disturbance(&model, t, 1e3, s).unwrap().samples().last().unwrap())
        .collect();
    let var = finals.iter().map(|x| x * x).sum::<f64>() / finals.len() as f64;
    // 200 samples: relative standard error √(2/200) = 10 %
    assert!((var / (d * t) - 1.0).abs() < 0.3, "{var}");

    let drift = DisturbanceModel { linear_drift: 0.1, ..DisturbanceModel::quiet(model.pzt_resonance) };
    let s = simulate_phase_disturbance(&drift, 10.0, 100.0, 0).unwrap();
    assert!((s.samples().last().unwrap() - 0.1 * s.time(s.len() - 1)).abs() < 1e-9);
}

#[test]
fn pzt_resonant_gain_is_q_times_dc() {
    let res = PztResonance { f0: 19e3, quality_factor: 20.0, gain: 0.05, quadratic: 0.0 };
    let fs = 2e6;
    let n = 400_000;
    let drive = TimeSeries::new(fs, 0.0, (0..n).map(|i| (2.0 * PI * 19e3 * i as f64 / fs).sin()).collect()).unwrap();
    let y = pzt_response(&drive, &res).unwrap();
    let tail = &y.samples()[n / 2..];
    let amp = tail.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!((amp / (20.0 * 0.05) - 1.0).abs() < 0.02, "{amp}");
    let dc = pzt_response(&TimeSeries::new(fs, 0.0, vec![1.0; n]).unwrap(), &res).unwrap();
    assert!((dc.samples().last().unwrap() - 0.05).abs() < 1e-6);
}
