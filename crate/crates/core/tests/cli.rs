use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use squeezelab::detection::LoClassicalNoise;
use squeezelab::scenario::{presets, ScenarioFile};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_squeezelab"));
    c.env_remove("SQUEEZELAB_SEED");
    c
}

fn data(kind: &str) -> Vec<PathBuf> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(kind);
    let mut v: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

fn write_scenario(dir: &Path, name: &str, f: &ScenarioFile) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, f.to_json()).unwrap();
    p
}

fn run(args: &[&str], out: &Path) -> Output {
    bin().args(args).arg("--out").arg(out).output().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

/// Rows of a CSV file as f64 columns, header skipped; `inf` spellings parse.
fn csv_rows(path: &Path) -> Vec<Vec<f64>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect()
}

fn short_scan() -> ScenarioFile {
    let mut f = presets::phase_scan();
    f.run.duration = 0.15;
    f
}

#[test]
fn malformed_corpus_exits_2_with_location() {
    let files = data("malformed");
    assert!(files.len() >= 15);
    for f in files {
        let tmp = tempfile::tempdir().unwrap();
        let o = run(&["budget", f.to_str().unwrap()], tmp.path());
        let err = String::from_utf8_lossy(&o.stderr);
        assert_eq!(o.status.code(), Some(2), "{}: {err}", f.display());
        let line: usize = err
            .split("line ")
            .nth(1)
            .and_then(|s| s.split(',').next())
            .and_then(|s| s.parse().ok())
            .unwrap_or_else(|| panic!("{}: no line in {err}", f.display()));
        assert!(line >= 1, "{err}");
        assert!(!tmp.path().join("manifest.json").exists());
    }
}

#[test]
fn physics_corpus_exits_3() {
    for f in data("physics") {
        let tmp = tempfile::tempdir().unwrap();
        let o = run(&["budget", f.to_str().unwrap()], tmp.path());
        let err = String::from_utf8_lossy(&o.stderr);
        assert_eq!(o.status.code(), Some(3), "{}: {err}", f.display());
        assert!(err.contains("physics error"), "{err}");
    }
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(bin().arg("frobnicate").output().unwrap().status.code(), Some(2));
    assert_eq!(bin().arg("lock").output().unwrap().status.code(), Some(2));
    assert_eq!(bin().args(["preset", "fig9"]).output().unwrap().status.code(), Some(2));
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.json");
    assert_eq!(run(&["budget", missing.to_str().unwrap()], tmp.path()).status.code(), Some(2));
}

#[test]
fn lock_that_never_acquires_exits_4_and_keeps_diagnostics() {
    let tmp = tempfile::tempdir().unwrap();
    let mut f = presets::audio_lock();
    f.cavity.pump.gain_ratio = Some(0.0);
    f.run.duration = 0.05;
    let p = write_scenario(tmp.path(), "flat.json", &f);
    let out = tmp.path().join("out");
    let o = run(&["lock", p.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
    let s = json(&out.join("lock_summary.json"));
    assert_eq!(s["verdict"], "never");
    assert!(!s["diagnostics"].as_array().unwrap().is_empty());
    assert!(out.join("manifest.json").exists());
}

#[test]
fn budget_reports_the_loss_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let p = write_scenario(tmp.path(), "scan.json", &presets::phase_scan());
    let o = run(&["budget", p.to_str().unwrap()], tmp.path());
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("0.9031"), "{text}");
    assert!(text.contains("-10.14 dB"), "{text}");
    assert!(text.contains("measured -5.6 dB"), "{text}");
    let b = json(&tmp.path().join("budget.json"));
    assert!((b["total_efficiency"].as_f64().unwrap() - 0.903).abs() < 5e-4);
    assert!((b["predicted_squeezing_db"].as_f64().unwrap() + 5.8).abs() < 0.05);
    assert!((b["predicted_anti_squeezing_db"].as_f64().unwrap() - 7.0).abs() < 1e-6);
}

#[test]
fn unity_budget_has_unbounded_detection_limit() {
    let tmp = tempfile::tempdir().unwrap();
    let mut f = presets::audio_lock();
    f.budget = squeezelab::detection::EfficiencyBudget::unity();
    let p = write_scenario(tmp.path(), "unity.json", &f);
    let o = run(&["budget", p.to_str().unwrap()], tmp.path());
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("-inf dB"));
    assert_eq!(json(&tmp.path().join("budget.json"))["detection_bound_db"], "-inf");
}

#[test]
fn unpumped_spectrum_is_zero_db() {
    let tmp = tempfile::tempdir().unwrap();
    let mut f = presets::phase_scan();
    f.cavity.pump.fit_anti_squeezing_db = None;
    f.cavity.pump.gain_ratio = Some(0.0);
    let p = write_scenario(tmp.path(), "flat.json", &f);
    assert!(run(&["spectrum", p.to_str().unwrap(), "--points", "50"], tmp.path()).status.success());
    let rows = csv_rows(&tmp.path().join("spectrum.csv"));
    assert_eq!(rows.len(), 50);
    for r in rows {
        assert!(r[3].abs() < 1e-6 && r[4].abs() < 1e-6, "{r:?}");
    }
}

#[test]
fn one_point_spectrum_matches_budget() {
    let tmp = tempfile::tempdir().unwrap();
    let p = write_scenario(tmp.path(), "scan.json", &presets::phase_scan());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let sp = ["spectrum", p.to_str().unwrap(), "--fmin", "2e6", "--fmax", "2e6", "--points", "1"];
    assert!(run(&sp, &a).status.success());
    assert!(run(&["budget", p.to_str().unwrap()], &b).status.success());
    let row = &csv_rows(&a.join("spectrum.csv"))[0];
    let bj = json(&b.join("budget.json"));
    assert!((row[0] - 2e6).abs() < 1e-3);
    assert!((row[3] - bj["predicted_squeezing_db"].as_f64().unwrap()).abs() < 1e-5, "{row:?}");
    assert!((row[4] - bj["predicted_anti_squeezing_db"].as_f64().unwrap()).abs() < 1e-5, "{row:?}");
}

#[test]
fn seed_env_overrides_file_and_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let p = write_scenario(tmp.path(), "scan.json", &short_scan());
    let ps = p.to_str().unwrap();
    let go = |dir: &str, env: Option<&str>, flag: Option<&str>| {
        let out = tmp.path().join(dir);
        let mut c = bin();
        c.args(["scan", ps]).arg("--out").arg(&out);
        if let Some(s) = flag {
            c.args(["--seed", s]);
        }
        if let Some(s) = env {
            c.env("SQUEEZELAB_SEED", s);
        }
        assert!(c.output().unwrap().status.success());
        (std::fs::read(out.join("scan_trace.csv")).unwrap(), json(&out.join("manifest.json")))
    };
    let (env7, m_env7) = go("e7", Some("7"), Some("3"));
    let (flag7, m_flag7) = go("f7", None, Some("7"));
    let (env8, _) = go("e8", Some("8"), None);
    assert_eq!(m_env7["seed"], 7);
    assert_eq!(m_flag7["seed"], 7);
    assert_eq!(env7, flag7);
    assert_ne!(env7, env8);

    let mut c = bin();
    let o = c.args(["scan", ps]).arg("--out").arg(tmp.path().join("bad")).env("SQUEEZELAB_SEED", "x").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn manifest_stamps_scale_and_hashes() {
    let tmp = tempfile::tempdir().unwrap();
    let p = write_scenario(tmp.path(), "scan.json", &short_scan());
    let out = tmp.path().join("o");
    assert!(run(&["scan", p.to_str().unwrap(), "--scale", "20"], &out).status.success());
    let m = json(&out.join("manifest.json"));
    assert_eq!(m["scale_factor"], 20.0);
    assert_eq!(m["command"], "scan");
    assert_eq!(m["version"], env!("CARGO_PKG_VERSION"));
    use sha2::{Digest, Sha256};
    let hex = |b: &[u8]| Sha256::digest(b).iter().map(|x| format!("{x:02x}")).collect::<String>();
    assert_eq!(m["scenario_sha256"], hex(&std::fs::read(&p).unwrap()));
    for o in m["outputs"].as_array().unwrap() {
        let bytes = std::fs::read(out.join(o["file"].as_str().unwrap())).unwrap();
        assert_eq!(o["sha256"], hex(&bytes));
    }
}

#[test]
fn runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let p = write_scenario(tmp.path(), "scan.json", &short_scan());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        assert!(run(&["scan", p.to_str().unwrap()], d).status.success());
    }
    for name in ["scan_trace.csv", "scan_summary.json", "manifest.json"] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn validate_passes() {
    let o = bin().arg("validate").output().unwrap();
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(o.status.success(), "{text}");
    assert_eq!(text.matches("PASS").count(), 6, "{text}");
    assert!(!text.contains("FAIL"));
}

#[test]
fn shipped_scenarios_match_presets() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    for (name, file) in [("phase-scan", "phase_scan.json"), ("audio-lock", "audio_lock.json")] {
        let o = bin().args(["preset", name]).output().unwrap();
        assert!(o.status.success());
        let shipped = std::fs::read_to_string(root.join(file)).unwrap();
        assert_eq!(String::from_utf8_lossy(&o.stdout), shipped, "{file}");
        ScenarioFile::parse(&shipped).unwrap();
    }
    let o = bin().arg("schema").output().unwrap();
    assert_eq!(String::from_utf8_lossy(&o.stdout), std::fs::read_to_string(root.join("schema.json")).unwrap());
}

#[test]
fn poincare_on_coherent_input_has_equal_axes() {
    let tmp = tempfile::tempdir().unwrap();
    let mut f = presets::audio_lock();
    f.cavity.pump.gain_ratio = Some(0.0);
    f.detector.lo_classical_noise = LoClassicalNoise::none();
    let p = write_scenario(tmp.path(), "coh.json", &f);
    assert!(run(&["poincare", p.to_str().unwrap()], tmp.path()).status.success());
    let axes: Vec<f64> = json(&tmp.path().join("poincare.json"))["ellipsoid_normalized"]["semi_axes"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert_eq!(axes.len(), 3);
    assert!(axes.iter().all(|a| (a - axes[0]).abs() < 1e-12), "{axes:?}");
}
