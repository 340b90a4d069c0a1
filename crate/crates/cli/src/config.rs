use std::fs;
use std::path::Path;

use acdc::engine::RunConfig;

use crate::CliError;

/// Parses a TOML document; missing keys take their defaults, unknown keys
/// are rejected.
pub fn parse_config_str(text: &str, origin: &str) -> Result<RunConfig, CliError> {
    let config: RunConfig = toml::from_str(text).map_err(|e| CliError::Parse {
        path: origin.to_string(),
        message: e.to_string().trim_end().to_string(),
    })?;
    config.validate()?;
    Ok(config)
}

pub fn parse_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    parse_config_str(&text, &path.display().to_string())
}

pub fn serialize_config(config: &RunConfig) -> String {
    toml::to_string(config).expect("run config serializes to TOML")
}
