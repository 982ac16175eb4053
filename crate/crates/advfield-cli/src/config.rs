//! Layered run configuration: built-in defaults, overridden by an
//! optional TOML file, overridden by command-line flags. Every command
//! resolves to a concrete config struct that is echoed into the run
//! directory as `run_config.toml`, a file that can itself be passed back
//! via --config to replay the run.

use advfield::{Error, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

/// Merges two option layers: the flag layer wins over the file layer.
pub fn layer<T>(flag: Option<T>, file: Option<T>) -> Option<T> {
    flag.or(file)
}

/// The file side of the layering. Sections are named after subcommands;
/// unknown keys are rejected so typos do not silently fall back to
/// defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    /// Echoed metadata when the file is a frozen run config; ignored.
    #[allow(dead_code)]
    pub command: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub gen_data: toml::Table,
    #[serde(default)]
    pub train_scorer: toml::Table,
    #[serde(default)]
    pub train_field: toml::Table,
    #[serde(default)]
    pub attack: toml::Table,
    #[serde(default)]
    pub augment: toml::Table,
    #[serde(default)]
    pub eval: toml::Table,
    #[serde(default)]
    pub export_ply: toml::Table,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<FileConfig> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::malformed(path, e.to_string()))
    }

    /// Deserializes one subcommand section into its option struct.
    pub fn section<T: DeserializeOwned + Default>(&self, name: &str) -> Result<T> {
        let table = match name {
            "gen-data" => &self.gen_data,
            "train-scorer" => &self.train_scorer,
            "train-field" => &self.train_field,
            "attack" => &self.attack,
            "augment" => &self.augment,
            "eval" => &self.eval,
            "export-ply" => &self.export_ply,
            other => unreachable!("unknown section {other}"),
        };
        if table.is_empty() {
            return Ok(T::default());
        }
        table
            .clone()
            .try_into()
            .map_err(|e| Error::Config(format!("config section for {name}: {e}")))
    }
}

/// Writes the fully resolved config of a run into its output directory.
/// The file loads back as a --config file for the same subcommand.
pub fn freeze<T: Serialize>(out_dir: &Path, command: &str, seed: u64, resolved: &T) -> Result<()> {
    let mut doc = toml::Table::new();
    doc.insert("command".into(), toml::Value::String(command.into()));
    doc.insert("seed".into(), toml::Value::Integer(seed as i64));
    let section = toml::Value::try_from(resolved)
        .map_err(|e| Error::Config(format!("cannot serialize run config: {e}")))?;
    doc.insert(command.replace('-', "_"), section);
    let path = out_dir.join("run_config.toml");
    let text = toml::to_string_pretty(&doc)
        .map_err(|e| Error::Config(format!("cannot serialize run config: {e}")))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// A required input that may come from either layer.
pub fn require<T>(value: Option<T>, what: &str, flag: &str) -> Result<T> {
    value.ok_or_else(|| Error::Config(format!("{what} is required; pass {flag} or set it in the config file")))
}

pub fn resolve_out(flag: Option<PathBuf>, file: Option<PathBuf>) -> Result<PathBuf> {
    require(layer(flag, file), "an output directory", "--out")
}
