//! Scenario documents in TOML.

use std::path::Path;

use kdv_core::{Error, Mode, ScenarioConfig};

use crate::error::{CliError, Result};

/// Parse and validate a scenario document. Every key is optional except that
/// an explicit `mode = "output_feedback"` also needs a `[uhat0]` table.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, Error> {
    let cfg: ScenarioConfig =
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
    let doc: toml::Table =
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
    if doc.contains_key("mode") && cfg.mode == Mode::OutputFeedback && !doc.contains_key("uhat0") {
        return Err(Error::Config(
            "uhat0: required when mode = \"output_feedback\"".into(),
        ));
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_config(&text).map_err(|e| match e {
        Error::Config(msg) => CliError::parse(path, msg),
        other => other.into(),
    })
}

/// Effective config, every key spelled out.
pub fn config_to_toml(cfg: &ScenarioConfig) -> String {
    toml::to_string(cfg).expect("scenario config serializes to TOML")
}
