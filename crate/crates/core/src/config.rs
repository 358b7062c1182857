//! TOML run configuration with `GTGIB_<SECTION>_<KEY>` environment overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backbone::ModelConfig;
use crate::enhancer::EnhancerConfig;
use crate::error::{Error, Result};
use crate::filter::FilterConfig;
use crate::graph::SplitSpec;
use crate::numerics::params::hex;
use crate::synth::SyntheticSpec;
use crate::train::{Experiment, LossWeights, TrainConfig};

pub const ENV_PREFIX: &str = "GTGIB_";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// JODIE-style CSV; the synthetic generator is used when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Treat the two id columns as separate user and item namespaces.
    pub bipartite: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("runs/latest") }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub synthetic: SyntheticSpec,
    pub split: SplitSpec,
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub filter: FilterConfig,
    pub enhancer: EnhancerConfig,
    pub loss: LossWeights,
    pub output: OutputConfig,
}

const SECTIONS: [&str; 9] = ["data", "synthetic", "split", "train", "model", "filter", "enhancer", "loss", "output"];

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        Self::from_toml_with_env(s, std::iter::empty())
    }

    /// Parses `s`, then applies `(name, value)` overrides such as
    /// `GTGIB_TRAIN_BATCH_SIZE=100`. Names outside the known sections are
    /// ignored; unknown keys inside a section are rejected.
    pub fn from_toml_with_env(s: &str, vars: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        for (name, raw) in vars {
            let Some(rest) = name.strip_prefix(ENV_PREFIX) else { continue };
            let rest = rest.to_ascii_lowercase();
            let Some((section, key)) = rest.split_once('_') else { continue };
            if !SECTIONS.contains(&section) || key.is_empty() {
                continue;
            }
            let entry = table
                .entry(section.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            match entry {
                toml::Value::Table(t) => {
                    t.insert(key.to_string(), parse_value(&raw));
                }
                _ => return Err(Error::Config(format!("`{section}` is not a section"))),
            }
        }
        let cfg: RunConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Reads `path` and applies the process environment.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::FileNotFound(path.to_path_buf()));
        }
        let s = std::fs::read_to_string(path)?;
        Self::from_toml_with_env(&s, std::env::vars())
    }

    /// Defaults plus the process environment.
    pub fn from_env() -> Result<Self> {
        Self::from_toml_with_env("", std::env::vars())
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the canonical serialization.
    pub fn hash(&self) -> Result<String> {
        Ok(hex(&Sha256::digest(self.to_toml_string()?.as_bytes())))
    }

    pub fn experiment(&self) -> Experiment {
        Experiment {
            train: self.train.clone(),
            model: self.model.clone(),
            filter: self.filter.clone(),
            enhancer: self.enhancer.clone(),
            loss: self.loss,
            split: self.split.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(p) = &self.data.path {
            if !p.exists() {
                return Err(Error::FileNotFound(p.clone()));
            }
        } else {
            self.synthetic.validate()?;
        }
        self.experiment().validate()
    }
}
