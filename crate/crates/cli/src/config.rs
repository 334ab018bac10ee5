//! Scenario config files and world lookup.

use std::path::{Path, PathBuf};

use cslam::sim::{fixture, MappingMode, ScenarioConfig, World};

use crate::{read, CliError};

/// Parses a TOML scenario file. Missing keys take their defaults, unknown
/// keys are rejected.
pub fn parse_config(path: &Path, text: &str) -> Result<ScenarioConfig, CliError> {
    toml::from_str(text).map_err(|e| CliError::input(path, e.to_string().trim_end()))
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig, CliError> {
    parse_config(path, &read(path)?)
}

pub fn to_toml(cfg: &ScenarioConfig) -> String {
    toml::to_string(cfg).expect("config serializes")
}

/// Command-line overrides applied on top of a config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub mode: Option<MappingMode>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ScenarioConfig) {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(m) = self.mode {
            cfg.mode = m;
        }
    }
}

/// Built-in fixture name, or a segment file relative to `base`.
pub fn resolve_world(name: &str, base: Option<&Path>) -> Result<World, CliError> {
    if let Some(w) = fixture(name) {
        return Ok(w);
    }
    let mut path = PathBuf::from(name);
    if path.is_relative() {
        if let Some(b) = base {
            path = b.join(path);
        }
    }
    if !path.is_file() {
        return Err(CliError::WorldNotFound(path.display().to_string()));
    }
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("world").to_string();
    World::parse(&stem, &read(&path)?).map_err(|e| CliError::input(&path, e))
}
