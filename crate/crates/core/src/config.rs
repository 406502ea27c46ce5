//! Run configuration, read from TOML. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::critic::ValueTrainConfig;
use crate::embedder::EmbedTrainConfig;
use crate::error::{Error, Result};
use crate::policy::PolicyTrainConfig;
use crate::rl::RlConfig;
use crate::sceneworld::{DataConfig, MAX_CAPTION_LEN};

/// Model widths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelDims {
    /// Policy input and hidden width.
    pub hidden: usize,
    /// Shared image/sentence embedding width.
    pub embed_dim: usize,
    pub embed_word_dim: usize,
    /// Ranking-loss margin.
    pub margin: f64,
    pub value_visual_dim: usize,
    pub value_hidden: usize,
    pub value_mlp: Vec<usize>,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            hidden: 64,
            embed_dim: 64,
            embed_word_dim: 32,
            margin: 0.2,
            value_visual_dim: 64,
            value_hidden: 64,
            value_mlp: vec![128, 64],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeConfig {
    pub lambda: f64,
    pub beam: usize,
    pub max_len: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            lambda: 0.4,
            beam: 10,
            max_len: MAX_CAPTION_LEN,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelDims,
    pub embed: EmbedTrainConfig,
    pub policy: PolicyTrainConfig,
    pub value: ValueTrainConfig,
    pub rl: RlConfig,
    pub decode: DecodeConfig,
}

fn positive(what: &str, x: usize) -> Result<()> {
    if x == 0 {
        return Err(Error::Config(format!("{what} must be positive")));
    }
    Ok(())
}

fn rate(what: &str, x: f64) -> Result<()> {
    if !x.is_finite() || x < 0.0 {
        return Err(Error::Config(format!("{what} must be a finite non-negative number, got {x}")));
    }
    Ok(())
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        for (what, x) in [
            ("model.hidden", m.hidden),
            ("model.embed_dim", m.embed_dim),
            ("model.embed_word_dim", m.embed_word_dim),
            ("model.value_visual_dim", m.value_visual_dim),
            ("model.value_hidden", m.value_hidden),
            ("data.feature_dim", self.data.feature_dim),
            ("data.n_train", self.data.n_train),
            ("data.n_val", self.data.n_val),
            ("data.n_test", self.data.n_test),
            ("policy.batch_size", self.policy.batch_size),
            ("value.batch_size", self.value.batch_size),
            ("value.rollouts_per_example", self.value.rollouts_per_example),
            ("rl.batch_size", self.rl.batch_size),
            ("rl.delta", self.rl.delta),
            ("decode.beam", self.decode.beam),
            ("decode.max_len", self.decode.max_len),
            ("value.max_len", self.value.max_len),
            ("rl.max_len", self.rl.max_len),
        ] {
            positive(what, x)?;
        }
        if m.value_mlp.contains(&0) {
            return Err(Error::Config("model.value_mlp widths must be positive".into()));
        }
        if !(m.margin > 0.0 && m.margin.is_finite()) {
            return Err(Error::Config("model.margin must be positive".into()));
        }
        if self.embed.batch_size < 2 {
            return Err(Error::Config("embed.batch_size must be at least 2".into()));
        }
        for (what, x) in [
            ("embed.lr", self.embed.lr),
            ("policy.lr", self.policy.lr),
            ("value.lr", self.value.lr),
            ("rl.policy_lr", self.rl.policy_lr),
            ("rl.value_lr", self.rl.value_lr),
            ("data.feature_noise", self.data.feature_noise),
        ] {
            rate(what, x)?;
        }
        if !(0.0..=1.0).contains(&self.decode.lambda) {
            return Err(Error::Config(format!("decode.lambda {} outside [0, 1]", self.decode.lambda)));
        }
        Ok(())
    }
}
