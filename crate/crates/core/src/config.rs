//! Strict JSON run configuration and the built-in architecture presets.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decoder::DecoderParams;
use crate::model::ArchSpec;
use crate::train::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config: {0}")]
    Parse(String),
    #[error("config: {0}")]
    Invalid(String),
    #[error("{0}: file not found")]
    MissingFile(&'static str),
    #[error("unknown preset `{0}` (available: wsj-low-dropout, libri-low-dropout, libri-high-dropout)")]
    UnknownPreset(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub manifest: Option<PathBuf>,
    pub valid_manifest: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub arpa: Option<PathBuf>,
    pub checkpoint_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub arch: ArchSpec,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub decoder: DecoderParams,
}

pub const PRESETS: [&str; 3] = ["wsj-low-dropout", "libri-low-dropout", "libri-high-dropout"];

impl Config {
    pub fn with_arch(arch: ArchSpec) -> Self {
        Self {
            arch,
            paths: Paths::default(),
            train: TrainConfig::default(),
            decoder: DecoderParams::default(),
        }
    }

    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        let arch = match name {
            "wsj-low-dropout" => ArchSpec::wsj_low_dropout(),
            "libri-low-dropout" => ArchSpec::libri_low_dropout(),
            "libri-high-dropout" => ArchSpec::libri_high_dropout(),
            _ => return Err(ConfigError::UnknownPreset(name.to_string())),
        };
        Ok(Self::with_arch(arch))
    }

    /// Parses and validates without touching the file system.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let config: Self = serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |field: &str, e: &dyn std::fmt::Display| ConfigError::Invalid(format!("{field}: {e}"));
        self.arch.validate().map_err(|e| invalid("arch", &e))?;
        self.train.validate().map_err(|e| invalid("train", &e))?;
        self.decoder.validate().map_err(|e| invalid("decoder", &e))?;
        Ok(())
    }

    /// Checks that every referenced input file exists. Relative paths are
    /// resolved against `base` first.
    pub fn check_paths(&mut self, base: &Path) -> Result<(), ConfigError> {
        let p = &mut self.paths;
        for (name, slot) in [
            ("manifest", &mut p.manifest),
            ("valid_manifest", &mut p.valid_manifest),
            ("lexicon", &mut p.lexicon),
            ("arpa", &mut p.arpa),
        ] {
            if let Some(path) = slot {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
                if !path.is_file() {
                    return Err(ConfigError::MissingFile(name));
                }
            }
        }
        if let Some(dir) = &mut p.checkpoint_dir {
            if dir.is_relative() {
                *dir = base.join(&*dir);
            }
        }
        Ok(())
    }
}

/// Reads, validates and resolves a config file.
pub fn load_config<P: AsRef<Path>>(path: P) -> Result<Config, ConfigError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut config = Config::from_json(&text)?;
    config.check_paths(path.parent().unwrap_or(Path::new(".")))?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_match_table() {
        let wsj = Config::preset("wsj-low-dropout").unwrap().arch;
        assert_eq!(
            (wsj.n_conv_layers, wsj.kw_first, wsj.kw_last, wsj.hu_first, wsj.hu_last, wsj.fc_size),
            (17, 3, 21, 100, 375, 1000)
        );
        assert_eq!((wsj.dropout_first, wsj.dropout_last), (0.25, 0.25));
        let hi = Config::preset("libri-high-dropout").unwrap().arch;
        assert_eq!(
            (hi.n_conv_layers, hi.dropout_first, hi.dropout_last, hi.kw_first, hi.kw_last, hi.fc_size),
            (19, 0.20, 0.60, 13, 29, 2000)
        );
        assert!(Config::preset("nope").is_err());
    }

    #[test]
    fn round_trip() {
        for name in PRESETS {
            let c = Config::preset(name).unwrap();
            assert_eq!(Config::from_json(&c.to_json()).unwrap(), c);
        }
    }

    #[test]
    fn unknown_keys_name_the_field() {
        let mut v: serde_json::Value = serde_json::from_str(&Config::preset("wsj-low-dropout").unwrap().to_json()).unwrap();
        v["train"]["learning_rat"] = serde_json::json!(0.1);
        let err = Config::from_json(&v.to_string()).unwrap_err().to_string();
        assert!(err.contains("learning_rat"), "{err}");
    }

    #[test]
    fn invalid_values_rejected() {
        let mut c = Config::preset("wsj-low-dropout").unwrap();
        c.decoder.beam_size = 0;
        assert!(Config::from_json(&c.to_json()).is_err());
    }

    #[test]
    fn missing_manifest() {
        let mut c = Config::preset("wsj-low-dropout").unwrap();
        c.paths.manifest = Some("does-not-exist.tsv".into());
        let err = c.check_paths(Path::new("/nonexistent")).unwrap_err();
        assert_eq!(err.to_string(), "manifest: file not found");
    }
}
