//! The experiment configuration file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DecodeOptions, ModelConfig};
use crate::search::SearchParams;
use crate::synth::SynthConfig;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeConfig {
    /// Registered strategy name: `beam` or `greedy`.
    pub strategy: String,
    pub beam: usize,
    pub beta: f64,
    pub gamma: f64,
    pub half_width: Option<usize>,
    pub max_len: Option<usize>,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        let sp = SearchParams::default();
        Self { strategy: "beam".into(), beam: sp.beam, beta: sp.beta, gamma: sp.gamma, half_width: Some(25), max_len: None }
    }
}

impl DecodeConfig {
    pub fn search(&self) -> SearchParams {
        SearchParams { beam: self.beam, beta: self.beta, gamma: self.gamma }
    }

    pub fn options(&self) -> DecodeOptions {
        DecodeOptions { max_len: self.max_len, half_width: self.half_width }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LmConfig {
    pub order: usize,
    pub k: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self { order: 3, k: 0.1 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
    pub lm: LmConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    /// Applies a global seed to data synthesis, initialization and training.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.synth.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.train.validate()?;
        if self.decode.beam == 0 {
            return Err(Error::config("decode.beam must be at least 1"));
        }
        if !(self.decode.beta >= 0.0 && self.decode.beta.is_finite()) {
            return Err(Error::config("decode.beta must be finite and non-negative"));
        }
        if self.lm.order == 0 || !(self.lm.k > 0.0) {
            return Err(Error::config("lm.order must be at least 1 and lm.k positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_default() {
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = RunConfig::from_json(r#"{"trian": {}}"#).unwrap_err();
        assert_eq!(err.category(), "config");
        let err = RunConfig::from_json(r#"{"train": {"lr": 1}}"#).unwrap_err();
        assert!(err.to_string().contains("lr"), "{err}");
    }

    #[test]
    fn nested_override() {
        let cfg = RunConfig::from_json(r#"{"train": {"batch_size": 3}, "decode": {"beam": 2}}"#).unwrap();
        assert_eq!(cfg.train.batch_size, 3);
        assert_eq!(cfg.decode.beam, 2);
        assert_eq!(cfg.train.learning_rate, 1e-3);
    }

    #[test]
    fn default_round_trips() {
        let text = serde_json::to_string_pretty(&RunConfig::default()).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), RunConfig::default());
    }
}
