//! `validate`: analytic invariants plus one short stochastic oracle run.

use std::f64::consts::PI;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use squeezelab::detection::{apply_loss, poincare_ellipsoid, stokes_state, to_db, total_efficiency, DetectorModel, EfficiencyBudget};
use squeezelab::dsp::{welch_psd, Window};
use squeezelab::opo::{
    decay_rates_from_geometry, fit_pump_gain, output_variances, CavityGeometry, CavityParams, FitOptions, NoiseInputs,
    NoiseSpectrum, QuadPair,
};
use squeezelab::spectrum::log_grid;
use squeezelab::stochastic::{simulate_output_quadratures, SimConfig};

use super::Failure;

type Check = (&'static str, fn() -> Result<String, String>);

fn escape() -> Result<String, String> {
    let r = decay_rates_from_geometry(&CavityGeometry::lab_opo()).map_err(|e| e.to_string())?;
    let e = r.escape_efficiency();
    let msg = format!("escape {e:.5}");
    if (e - 0.9664).abs() <= 5e-4 { Ok(msg) } else { Err(msg) }
}

fn uncertainty_product() -> Result<String, String> {
    let kappa = 2.0 * PI * 5e6;
    let grid = log_grid(1.0, 1e9, 1000);
    let mut worst = 0.0f64;
    for ratio in [0.1, 0.4, 0.9] {
        let p = CavityParams::single_ended(kappa, ratio).map_err(|e| e.to_string())?;
        for &f in &grid {
            let v = output_variances(&p, &NoiseInputs::default(), 2.0 * PI * f).map_err(|e| e.to_string())?;
            worst = worst.max((v.plus * v.minus - 1.0).abs());
        }
    }
    let msg = format!("max |V+V- - 1| = {worst:.2e}");
    if worst <= 1e-9 { Ok(msg) } else { Err(msg) }
}

fn vacuum_decoupling() -> Result<String, String> {
    let rates = decay_rates_from_geometry(&CavityGeometry::lab_opo()).map_err(|e| e.to_string())?;
    let p = CavityParams::with_gain(rates, 0.4 * rates.kappa_a(), 0.0).map_err(|e| e.to_string())?;
    let grid = log_grid(1e2, 1e8, 64);
    let eval = |vp: f64, vd: f64| -> Result<Vec<QuadPair<f64>>, String> {
        let noise = NoiseInputs {
            v_pump: QuadPair::splat(NoiseSpectrum::Constant(vp)),
            v_detuning: NoiseSpectrum::Constant(vd),
            ..NoiseInputs::default()
        };
        grid.iter().map(|&f| output_variances(&p, &noise, 2.0 * PI * f).map_err(|e| e.to_string())).collect()
    };
    let base = eval(1.0, 0.0)?;
    for vp in [0.0, 1.0, 100.0] {
        for vd in [0.0, 1.0, 100.0] {
            if eval(vp, vd)? != base {
                return Err(format!("V_p = {vp}, V_delta = {vd} changed the spectrum"));
            }
        }
    }
    Ok("bit-identical over 9 combinations".into())
}

fn loss_chain() -> Result<String, String> {
    let eta = total_efficiency(&EfficiencyBudget::lab());
    let p = CavityParams::single_ended(1.0, 0.1).map_err(|e| e.to_string())?;
    let noise = NoiseInputs::default();
    let g = fit_pump_gain(7.0, eta, &p, &noise, FitOptions::default()).map_err(|e| e.to_string())?;
    let q = p.with_gain_value(g).map_err(|e| e.to_string())?;
    let v = output_variances(&q, &noise, 0.0).map_err(|e| e.to_string())?;
    let sq = to_db(apply_loss(v.minus, eta)).map_err(|e| e.to_string())?;
    let msg = format!("eta {eta:.4}, g/kappa {:.3}, predicted {sq:.2} dB", g);
    let ok = (eta - 0.903).abs() < 5e-4 && (sq + 5.8).abs() < 0.05 && (sq + 5.6).abs() <= 0.4;
    if ok { Ok(msg) } else { Err(msg) }
}

fn stokes() -> Result<String, String> {
    let det = DetectorModel::lab();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = f64::INFINITY;
    for _ in 0..1000 {
        let vm: f64 = rng.random_range(0.01..1.0);
        let vp = rng.random_range(1.0 / vm..10.0 / vm);
        let th = rng.random_range(0.0..PI);
        let s = stokes_state(1e-3, 795e-9, vp, vm, th, &det).map_err(|e| e.to_string())?;
        worst = worst.min(s.normalized_uncertainty_product());
        let pure = stokes_state(1e-3, 795e-9, 1.0 / vm, vm, 0.0, &det).map_err(|e| e.to_string())?;
        if (pure.normalized_uncertainty_product() - 1.0).abs() > 1e-9 {
            return Err("minimum-uncertainty state off the bound".into());
        }
    }
    let coh = poincare_ellipsoid(&stokes_state(1e-3, 795e-9, 1.0, 1.0, 0.3, &det).map_err(|e| e.to_string())?, true);
    let equal = coh.semi_axes.iter().all(|a| (a - coh.semi_axes[0]).abs() < 1e-12);
    let msg = format!("min V(S2)V(S3) = {worst:.6}");
    if worst >= 1.0 - 1e-12 && equal { Ok(msg) } else { Err(msg) }
}

fn short_oracle() -> Result<String, String> {
    let kappa = 2.0 * PI * 100e3;
    let p = CavityParams::single_ended(kappa, 0.4).map_err(|e| e.to_string())?;
    let (fs, seg, segs) = (4e6, 4096usize, 200usize);
    let cfg = SimConfig::new(p, (seg * segs) as f64 / fs, fs, 11);
    let q = simulate_output_quadratures(&cfg).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for (ts, plus) in [(&q.plus, true), (&q.minus, false)] {
        let psd = welch_psd(ts, seg, 0.0, Window::Hann).map_err(|e| e.to_string())?;
        let (mut meas, mut want) = (0.0, 0.0);
        for k in 2..=20 {
            let f = psd.frequencies()[k];
            let v = output_variances(&p, &NoiseInputs::default(), 2.0 * PI * f).map_err(|e| e.to_string())?;
            meas += psd.values()[k] * fs / 2.0;
            want += if plus { v.plus } else { v.minus };
        }
        worst = worst.max((10.0 * (meas / want).log10()).abs());
    }
    let msg = format!("worst band error {worst:.3} dB");
    if worst <= 0.3 { Ok(msg) } else { Err(msg) }
}

pub fn validate() -> Result<(), Failure> {
    let checks: [Check; 6] = [
        ("escape efficiency 0.9664 +/- 0.0005", escape),
        ("V+ V- = 1 (single-ended, lossless)", uncertainty_product),
        ("vacuum seed decouples pump/detuning", vacuum_decoupling),
        ("loss chain: eta 0.903, -5.8 dB", loss_chain),
        ("Stokes uncertainty V(S2)V(S3) >= 1", stokes),
        ("stochastic oracle within 0.3 dB", short_oracle),
    ];
    let mut failed = 0;
    for (name, f) in checks {
        let t = Instant::now();
        let (tag, msg) = match f() {
            Ok(m) => ("PASS", m),
            Err(m) => {
                failed += 1;
                ("FAIL", m)
            }
        };
        println!("{tag}  {name:<40} {msg}  [{:.2?}]", t.elapsed());
    }
    if failed == 0 {
        Ok(())
    } else {
        Err(Failure::Physics(format!("{failed} check(s) failed")))
    }
}
