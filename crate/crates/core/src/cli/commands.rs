use std::f64::consts::{FRAC_PI_2, PI};
use std::io::Write;

use serde_json::{json, Value};
use squeezelab::detection::{apply_loss, detected_variance, detection_bound_db, poincare_ellipsoid, stokes_state, to_db};
use squeezelab::noise_lock::{locked_spectrum_with_artifacts, run_lock, run_scan, LockVerdict};
use squeezelab::opo::{fit_pump_gain, CavityParams, FitOptions};
use squeezelab::spectrum::log_grid;
use squeezelab::{fmt_db, Execution};

use super::output::Artifacts;
use super::{Failure, Loaded};

/// Reference levels measured at 2 MHz, printed next to predictions.
const MEASURED_SQUEEZING_DB: f64 = -5.6;
const MEASURED_ANTI_SQUEEZING_DB: f64 = 7.0;

/// Finite numbers as JSON numbers, ±inf as strings.
fn db_value(db: f64) -> Value {
    if db.is_finite() {
        json!(db)
    } else {
        json!(fmt_db(db))
    }
}

fn db_text(db: f64) -> String {
    if db.is_finite() {
        format!("{db:+.2} dB")
    } else {
        format!("{} dB", fmt_db(db))
    }
}

fn finish(art: Artifacts, command: &str, l: &Loaded) -> Result<(), Failure> {
    art.finish(command, &l.raw, l.scenario.seed, l.scenario.scale_factor)?;
    Ok(())
}

pub fn budget(l: &Loaded, anti_db: Option<f64>, frequency: Option<f64>) -> Result<(), Failure> {
    let b = &l.scenario.budget;
    let eta = l.scenario.efficiency();
    let bound = detection_bound_db(eta);
    let f = frequency.unwrap_or(l.scenario.zero_span.center_frequency);
    let mut out = String::new();
    let esc_note = if b.escape_included_upstream { "  (in cavity model, not applied)" } else { "" };
    out += &format!("quantum efficiency      {:.4}\n", b.quantum_efficiency);
    out += &format!("escape efficiency       {:.4}{esc_note}\n", b.escape_efficiency);
    out += &format!("propagation efficiency  {:.4}\n", b.propagation_efficiency);
    out += &format!("visibility              {:.4}  (enters squared)\n", b.visibility);
    out += &format!("total efficiency        {eta:.4}\n");
    out += &format!("detection bound         {}\n", db_text(bound));

    let fit_target = anti_db.or(l.file.cavity.pump.fit_anti_squeezing_db);
    let params = match fit_target {
        Some(db) => {
            let template = CavityParams::with_gain(l.file.rates()?, 0.0, l.file.cavity.alpha)?;
            let opts = FitOptions { analysis_frequency_hz: f, max_pump_fraction: l.file.cavity.pump.max_pump_fraction };
            let g = fit_pump_gain(db, eta, &template, &l.scenario.noise, opts)?;
            template.with_gain_value(g)?
        }
        None => l.scenario.params,
    };
    let v = squeezelab::opo::output_variances(&params, &l.scenario.noise, 2.0 * PI * f)?;
    let sq = to_db(apply_loss(v.minus, eta))?;
    let anti = to_db(apply_loss(v.plus, eta))?;
    out += &format!("analysis frequency      {f:.6e} Hz\n");
    out += &format!("g/kappa_a               {:.4}{}\n", params.gain_ratio(), if fit_target.is_some() { "  (fitted)" } else { "" });
    out += &format!("predicted squeezing     {}  (measured {MEASURED_SQUEEZING_DB:+.1} dB)\n", db_text(sq));
    out += &format!("predicted anti-squeez.  {}  (measured {MEASURED_ANTI_SQUEEZING_DB:+.1} dB)\n", db_text(anti));
    print!("{out}");

    let report = json!({
        "quantum_efficiency": b.quantum_efficiency,
        "escape_efficiency": b.escape_efficiency,
        "escape_included_upstream": b.escape_included_upstream,
        "propagation_efficiency": b.propagation_efficiency,
        "visibility": b.visibility,
        "total_efficiency": eta,
        "detection_bound_db": db_value(bound),
        "analysis_frequency_hz": f,
        "fitted_anti_squeezing_db": fit_target,
        "gain_ratio": params.gain_ratio(),
        "predicted_squeezing_db": sq,
        "predicted_anti_squeezing_db": anti,
        "measured_squeezing_db": MEASURED_SQUEEZING_DB,
        "measured_anti_squeezing_db": MEASURED_ANTI_SQUEEZING_DB,
    });
    let mut art = Artifacts::create(&l.out_dir)?;
    art.write_json("budget.json", &report)?;
    finish(art, "budget", l)
}

pub fn spectrum(l: &Loaded, fmin: f64, fmax: f64, points: usize) -> Result<(), Failure> {
    if !(fmin > 0.0 && fmax >= fmin && points > 0) {
        return Err(Failure::Schema(format!("need 0 < fmin <= fmax and points >= 1 (got {fmin}, {fmax}, {points})")));
    }
    let sc = &l.scenario;
    let eta = sc.efficiency();
    let grid = log_grid(fmin, fmax, points);
    let spec = squeezelab::opo::variance_spectrum(&sc.params, &sc.noise, &grid, Execution::default())?;
    let mut art = Artifacts::create(&l.out_dir)?;
    let path = art.csv("spectrum.csv", |w| {
        writeln!(w, "frequency_hz,v_minus,v_plus,v_minus_db,v_plus_db")?;
        for (i, &f) in grid.iter().enumerate() {
            let vp = spec.plus.values()[i];
            let vm = spec.minus.values()[i];
            let dm = detected_variance(vp, vm, 0.0, eta, &sc.detector, f, false);
            let dp = detected_variance(vp, vm, FRAC_PI_2, eta, &sc.detector, f, false);
            writeln!(w, "{f:.11e},{dm:.11e},{dp:.11e},{},{}", fmt_db(10.0 * dm.log10()), fmt_db(10.0 * dp.log10()))?;
        }
        Ok(())
    })?;
    println!("wrote {}", path.display());
    finish(art, "spectrum", l)
}

pub fn scan(l: &Loaded, ramp: Option<f64>) -> Result<(), Failure> {
    let sc = &l.scenario;
    let ramp = ramp.unwrap_or(sc.ramp_rate);
    if ramp == 0.0 {
        return Err(Failure::Schema("scan needs a non-zero ramp rate (run.ramp_rate or --ramp-rate)".into()));
    }
    let r = run_scan(sc, ramp)?;
    let fs = r.power.sample_rate();
    let stride = ((fs / (100.0 * sc.zero_span.vbw)).floor() as usize).max(1);
    let mut art = Artifacts::create(&l.out_dir)?;
    art.csv("scan_trace.csv", |w| {
        writeln!(w, "time_s,theta_rad,power,power_db")?;
        let (p, th) = (r.power.samples(), r.phase.samples());
        for i in (0..p.len()).step_by(stride) {
            writeln!(w, "{:.11e},{:.11e},{:.11e},{}", r.power.time(i), th[i], p[i], fmt_db(10.0 * p[i].log10()))?;
        }
        Ok(())
    })?;
    let summary = json!({
        "trough_db": r.trough_db,
        "crest_db": r.crest_db,
        "ramp_rate_rad_s": ramp,
        "period_s": PI / ramp.abs(),
        "settle_s": r.settle_samples as f64 / fs,
        "trace_stride": stride,
    });
    art.write_json("scan_summary.json", &summary)?;
    println!("trough {}  crest {}", db_text(r.trough_db), db_text(r.crest_db));
    finish(art, "scan", l)
}

pub fn lock(l: &Loaded) -> Result<(), Failure> {
    let sc = &l.scenario;
    let r = run_lock(sc)?;
    let mut art = Artifacts::create(&l.out_dir)?;
    let stride = 10;
    art.csv("lock_trajectory.csv", |w| {
        writeln!(w, "time_s,theta_rad,lock_point_rad,error_signal")?;
        let (th, lp, e) = (r.phase_trajectory.samples(), r.lock_point_trajectory.samples(), r.error_signal.samples());
        for i in (0..th.len()).step_by(stride) {
            writeln!(w, "{:.11e},{:.11e},{:.11e},{:.11e}", r.phase_trajectory.time(i), th[i], lp[i], e[i])?;
        }
        Ok(())
    })?;
    let mut summary = serde_json::to_value(r.summary(sc)).map_err(anyhow::Error::from)?;
    if let Some(sp) = &r.locked_spectrum {
        art.csv("locked_spectrum.csv", |w| sp.write_csv(w))?;
        let rep = locked_spectrum_with_artifacts(&r, sc)?;
        art.write_json("artifacts.json", &rep)?;
        summary["plateau_db"] = json!(rep.plateau_db);
        summary["predicted_plateau_db"] = json!(rep.predicted_plateau_db);
    }
    art.write_json("lock_summary.json", &summary)?;
    finish(art, "lock", l)?;
    println!("verdict {:?}", r.verdict);
    if let Some(p) = summary.get("plateau_db") {
        println!("plateau {:.3} dB", p.as_f64().unwrap_or(f64::NAN));
    }
    for d in &r.diagnostics {
        eprintln!("note: {d}");
    }
    match r.verdict {
        LockVerdict::Never => Err(Failure::LockFailure(format!("lock never acquired: {}", r.diagnostics.join("; ")))),
        _ => Ok(()),
    }
}

pub fn poincare(l: &Loaded, lo_power: f64, wavelength: f64, frequency: Option<f64>) -> Result<(), Failure> {
    let sc = &l.scenario;
    let f = frequency.unwrap_or(sc.zero_span.center_frequency);
    let v = sc.cavity_variances(f)?;
    let eta = sc.efficiency();
    let (vp, vm) = (apply_loss(v.plus, eta), apply_loss(v.minus, eta));
    let st = stokes_state(lo_power, wavelength, vp, vm, sc.mode.target(), &sc.detector)?;
    let report = json!({
        "analysis_frequency_hz": f,
        "v_plus": vp,
        "v_minus": vm,
        "stokes": st,
        "normalized_uncertainty_product": st.normalized_uncertainty_product(),
        "ellipsoid_normalized": poincare_ellipsoid(&st, true),
        "ellipsoid": poincare_ellipsoid(&st, false),
    });
    let mut art = Artifacts::create(&l.out_dir)?;
    art.write_json("poincare.json", &report)?;
    println!("semi-axes (normalized) {:?}", poincare_ellipsoid(&st, true).semi_axes);
    finish(art, "poincare", l)
}
