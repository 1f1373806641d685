//! TOML/JSON configuration files. Parse errors keep the parser's line and
//! field diagnostics.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;

use crate::error::{CliError, CliResult};

pub fn load<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let is_json = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let config_error = |message: String| CliError::Config {
        path: path.to_path_buf(),
        message,
    };
    if is_json {
        serde_json::from_str(&text).map_err(|e| config_error(e.to_string()))
    } else {
        toml::from_str(&text).map_err(|e| config_error(e.to_string().trim_end().to_string()))
    }
}
