use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use structdist::{EvalConfig, SynthConfig, TrainConfig};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Contents of a `--config` file. Every section is optional; unknown keys are
/// rejected at any level.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Overrides the seed of every section.
    pub seed: Option<u64>,
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    /// Applies the global seed (flag first, then file) to every section.
    pub fn resolve_seed(&mut self, flag: Option<u64>) {
        if let Some(s) = flag.or(self.seed) {
            self.seed = Some(s);
            self.synth.seed = s;
            self.train.seed = s;
            self.eval.seed = s;
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Manifest<'a, T: Serialize> {
    pub command: &'a str,
    pub version: &'a str,
    /// Seed actually used by this command.
    pub seed: u64,
    pub config: &'a RunConfig,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<String>,
    pub details: T,
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
