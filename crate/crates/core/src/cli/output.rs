use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

fn hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize)]
struct Entry {
    file: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    scenario_sha256: String,
    seed: u64,
    scale_factor: f64,
    parallel_feature: bool,
    outputs: &'a [Entry],
}

/// Writes artifacts and, on `finish`, a manifest listing their hashes.
/// Nothing time- or host-dependent goes in, so reruns are byte-identical.
pub struct Artifacts {
    dir: PathBuf,
    entries: Vec<Entry>,
}

impl Artifacts {
    pub fn create(dir: &Path) -> anyhow::Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self { dir: dir.to_path_buf(), entries: Vec::new() })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> anyhow::Result<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.entries.push(Entry { file: name.to_string(), sha256: hex(bytes) });
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> anyhow::Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value).context("serializing JSON")?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn csv(&mut self, name: &str, fill: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> anyhow::Result<PathBuf> {
        let mut buf = Vec::new();
        fill(&mut buf).context("formatting CSV")?;
        self.write(name, &buf)
    }

    pub fn finish(self, command: &str, scenario_raw: &[u8], seed: u64, scale_factor: f64) -> anyhow::Result<()> {
        let m = Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            scenario_sha256: hex(scenario_raw),
            seed,
            scale_factor,
            parallel_feature: cfg!(feature = "parallel"),
            outputs: &self.entries,
        };
        let mut text = serde_json::to_string_pretty(&m).context("serializing manifest")?;
        text.push('\n');
        let path = self.dir.join("manifest.json");
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}
