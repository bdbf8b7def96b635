//! The single run configuration file and `key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoding::EncoderConfig;
use crate::error::{Error, Result};
use crate::model::{BackboneConfig, LayerSpec, TextLiftConfig};
use crate::objective::ObjectiveConfig;
use crate::synth::SynthSpec;
use crate::train::TrainConfig;

/// Environment variable naming the default data root.
pub const DATA_ROOT_ENV: &str = "CROSSMEDIA_DATA";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Base for relative paths; falls back to `$CROSSMEDIA_DATA`, then `.`.
    pub root: Option<PathBuf>,
    pub manifest: PathBuf,
    /// Held-out manifest for embedding and evaluation; the training
    /// manifest is used when absent.
    pub test_manifest: Option<PathBuf>,
    /// Class count; inferred from the largest label when absent.
    pub classes: Option<usize>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            root: None,
            manifest: PathBuf::from("synth/manifest.tsv"),
            test_manifest: None,
            classes: None,
        }
    }
}

impl DataConfig {
    pub fn root(&self) -> PathBuf {
        self.root
            .clone()
            .or_else(|| std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."))
    }

    /// `path` unchanged when absolute, otherwise under [`Self::root`].
    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.root().join(path)
        }
    }
}

/// Backbone settings not implied by the encoder geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub layers: Vec<LayerSpec>,
    pub feature_dim: usize,
    pub seed: u64,
    pub text_embed_dim: usize,
    pub text_hidden_channels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let desk = BackboneConfig::desk(1, 1);
        ModelConfig {
            layers: desk.layers,
            feature_dim: desk.feature_dim,
            seed: desk.seed,
            text_embed_dim: desk.text.embed_dim,
            text_hidden_channels: desk.text.hidden_channels,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Smallest ablation gain reported without a flag.
    pub min_gap: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { min_gap: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub synth: SynthSpec,
    pub encoder: EncoderConfig,
    pub model: ModelConfig,
    pub objective: ObjectiveConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Applies `a.b.c=value` overrides. Values are parsed as TOML and fall
    /// back to plain strings; unknown keys are rejected.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut doc = toml::Value::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            let o = o.as_ref();
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            let value = parse_value(raw.trim());
            let mut node = &mut doc;
            let parts: Vec<&str> = key.trim().split('.').collect();
            for (n, part) in parts.iter().enumerate() {
                let table = node
                    .as_table_mut()
                    .ok_or_else(|| Error::Config(format!("`{key}`: `{part}` is not inside a table")))?;
                if n + 1 == parts.len() {
                    table.insert(part.to_string(), value.clone());
                    break;
                }
                node = table
                    .entry(part.to_string())
                    .or_insert_with(|| toml::Value::Table(Default::default()));
            }
        }
        let cfg: RunConfig = doc.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.objective.validate()?;
        self.train.validate()?;
        if self.model.feature_dim == 0 || self.model.text_embed_dim == 0 || self.model.text_hidden_channels == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        let (len, size) = (self.encoder.text.max_len, self.encoder.size);
        if len % size != 0 {
            return Err(Error::Config(format!(
                "text length {len} must be a multiple of the input size {size}"
            )));
        }
        Ok(())
    }

    /// Backbone matching the encoder geometry.
    pub fn backbone(&self, classes: usize, vocab_size: usize) -> BackboneConfig {
        BackboneConfig {
            input_size: self.encoder.size,
            input_channels: self.encoder.channels,
            layers: self.model.layers.clone(),
            feature_dim: self.model.feature_dim,
            classes,
            seed: self.model.seed,
            text: TextLiftConfig {
                max_len: self.encoder.text.max_len,
                embed_dim: self.model.text_embed_dim,
                vocab_size,
                hidden_channels: self.model.text_hidden_channels,
                stride: self.encoder.text.max_len / self.encoder.size,
            },
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
