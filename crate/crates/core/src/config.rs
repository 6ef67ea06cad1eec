//! Human-readable key-value configuration shared by the CLI and manifests.
//!
//! Files are TOML. Unknown keys are rejected so typos never silently fall
//! back to defaults.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;

use crate::error::{ItaError, Result};

pub fn load_toml<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| ItaError::io(path, e))?;
    toml::from_str(&text).map_err(|e| ItaError::Config(format!("{}: {e}", path.display())))
}

pub fn parse_toml<T: DeserializeOwned>(text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| ItaError::Config(e.to_string()))
}
