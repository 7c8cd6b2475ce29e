//! `squeezelab` command line: scenario files in, CSV/JSON artifacts out.

mod checks;
mod commands;
mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use squeezelab::scenario::{presets, ScenarioError, ScenarioFile};
use squeezelab::noise_lock::LockScenario;

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_SCHEMA: i32 = 2;
pub const EXIT_PHYSICS: i32 = 3;
pub const EXIT_LOCK_FAILURE: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "squeezelab", version, about = "OPO squeezing, homodyne detection and noise-locking simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// Scenario JSON file.
    pub scenario: PathBuf,
    /// Output directory (overrides `run.output_dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Frequency scale factor (overrides `run.scale_factor`).
    #[arg(long)]
    pub scale: Option<f64>,
    /// Seed (overrides `run.seed`; SQUEEZELAB_SEED overrides both).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Efficiency chain, detection bound and pump fit.
    Budget {
        #[command(flatten)]
        common: Common,
        /// Measured anti-squeezing to fit the pump to, dB.
        #[arg(long, allow_hyphen_values = true)]
        anti_squeezing_db: Option<f64>,
        /// Analysis frequency of that measurement (default: analyzer center).
        #[arg(long)]
        frequency: Option<f64>,
    },
    /// Detected V−/V+ on a log grid.
    Spectrum {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1e3)]
        fmin: f64,
        #[arg(long, default_value_t = 10e6)]
        fmax: f64,
        #[arg(long, default_value_t = 200)]
        points: usize,
    },
    /// Open-loop LO phase scan through the zero-span analyzer.
    Scan {
        #[command(flatten)]
        common: Common,
        /// rad/s (overrides `run.ramp_rate`).
        #[arg(long, allow_hyphen_values = true)]
        ramp_rate: Option<f64>,
    },
    /// Closed-loop noise lock.
    Lock {
        #[command(flatten)]
        common: Common,
    },
    /// Stokes variances and Poincaré-sphere noise ellipsoid.
    Poincare {
        #[command(flatten)]
        common: Common,
        /// LO power, W.
        #[arg(long, default_value_t = 1e-3)]
        lo_power: f64,
        /// m
        #[arg(long, default_value_t = 794.975e-9)]
        wavelength: f64,
        /// Analysis frequency (default: analyzer center).
        #[arg(long)]
        frequency: Option<f64>,
    },
    /// Fast self-check of analytic invariants and a short stochastic oracle.
    Validate,
    /// Print a built-in scenario (`phase-scan` or `audio-lock`) as JSON.
    Preset { name: String },
    /// Print the JSON Schema of scenario files.
    Schema,
}

/// Outcome of a command: exit code plus message for stderr.
#[derive(Debug)]
pub enum Failure {
    Schema(String),
    Physics(String),
    LockFailure(String),
    Io(anyhow::Error),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Schema(_) => EXIT_SCHEMA,
            Failure::Physics(_) => EXIT_PHYSICS,
            Failure::LockFailure(_) => EXIT_LOCK_FAILURE,
            Failure::Io(_) => EXIT_IO,
        }
    }
}

impl From<squeezelab::Error> for Failure {
    fn from(e: squeezelab::Error) -> Self {
        Failure::Physics(e.to_string())
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Io(e)
    }
}

/// Loaded scenario with command-line and environment overrides applied.
pub struct Loaded {
    pub raw: Vec<u8>,
    pub file: ScenarioFile,
    pub scenario: LockScenario,
    pub out_dir: PathBuf,
}

fn load(common: &Common) -> Result<Loaded, Failure> {
    let raw = std::fs::read(&common.scenario)
        .map_err(|e| Failure::Schema(format!("{}: {e}", common.scenario.display())))?;
    let text = String::from_utf8(raw.clone())
        .map_err(|e| Failure::Schema(format!("{}: not UTF-8: {e}", common.scenario.display())))?;
    let name = common.scenario.display().to_string();
    let (mut file, _) = ScenarioFile::parse(&text).map_err(|e| match e {
        ScenarioError::Schema { .. } => Failure::Schema(format!("{name}: {e}")),
        ScenarioError::Physics(_) => Failure::Physics(format!("{name}: {e}")),
    })?;
    if let Some(s) = common.scale {
        file.run.scale_factor = s;
    }
    if let Some(s) = common.seed {
        file.run.seed = s;
    }
    if let Ok(v) = std::env::var("SQUEEZELAB_SEED") {
        file.run.seed = v
            .trim()
            .parse()
            .map_err(|_| Failure::Schema(format!("SQUEEZELAB_SEED={v:?} is not an unsigned integer")))?;
    }
    let scenario = file.build().map_err(|e| Failure::Physics(format!("{name}: {e}")))?;
    let out_dir = common
        .out
        .clone()
        .or_else(|| file.run.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("squeezelab-out"));
    Ok(Loaded { raw, file, scenario, out_dir })
}

fn preset(name: &str) -> Result<(), Failure> {
    let file = match name {
        "phase-scan" => presets::phase_scan(),
        "audio-lock" => presets::audio_lock(),
        other => return Err(Failure::Schema(format!("unknown preset `{other}` (phase-scan, audio-lock)"))),
    };
    println!("{}", file.to_json());
    Ok(())
}

pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_SCHEMA } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Budget { common, anti_squeezing_db, frequency } => {
            load(&common).and_then(|l| commands::budget(&l, anti_squeezing_db, frequency))
        }
        Command::Spectrum { common, fmin, fmax, points } => {
            load(&common).and_then(|l| commands::spectrum(&l, fmin, fmax, points))
        }
        Command::Scan { common, ramp_rate } => load(&common).and_then(|l| commands::scan(&l, ramp_rate)),
        Command::Lock { common } => load(&common).and_then(|l| commands::lock(&l)),
        Command::Poincare { common, lo_power, wavelength, frequency } => {
            load(&common).and_then(|l| commands::poincare(&l, lo_power, wavelength, frequency))
        }
        Command::Validate => checks::validate(),
        Command::Preset { name } => preset(&name),
        Command::Schema => {
            print!("{}", ScenarioFile::json_schema());
            Ok(())
        }
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            match &f {
                Failure::Io(e) => eprintln!("error: {e:#}"),
                Failure::Schema(m) | Failure::Physics(m) | Failure::LockFailure(m) => eprintln!("error: {m}"),
            }
            f.code()
        }
    }
}
