//! Run configuration, loadable from TOML or JSON.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::nn::Group;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{0}: {1}")]
    Io(String, std::io::Error),
    #[error("{0}: {1}")]
    Parse(String, String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    Generate,
    Judge,
}

/// Which decoder instructions receive language-model supervision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Generate,
    Judge,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subtask {
    Predcls,
    Sgdet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub stride: usize,
    /// Feature dimension `D`, shared by every module.
    pub dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { stride: 4, dim: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatchifyConfig {
    pub p: usize,
}

impl Default for PatchifyConfig {
    fn default() -> Self {
        Self { p: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RelqConfig {
    pub layers: usize,
    pub heads: usize,
    #[serde(rename = "E")]
    pub e: usize,
    /// Existence query reuses the feature-query SA/MaskCA/FFN stack.
    pub share_exist_trunk: bool,
    pub ffn_mult: usize,
    pub max_instruction_len: usize,
}

impl Default for RelqConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 4,
            e: 32,
            share_exist_trunk: true,
            ffn_mult: 4,
            max_instruction_len: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectorConfig {
    pub theta: f64,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        Self { theta: 0.35 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub max_len: usize,
    pub mode: DecodeMode,
    pub beam: usize,
    pub ffn_mult: usize,
    pub max_positions: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 4,
            max_len: 16,
            mode: DecodeMode::Judge,
            beam: 1,
            ffn_mult: 4,
            max_positions: 160,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringConfig {
    pub multiply_existence: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda: f64,
    pub lr: f64,
    /// Epoch (1-based) from which the learning rate is multiplied by 0.1.
    pub lr_drop_epoch: usize,
    pub epochs: usize,
    pub weight_decay: f64,
    pub freeze: Vec<String>,
    pub negative_pair_ratio: f64,
    pub seed: u64,
    pub batch_size: usize,
    pub grad_clip: f64,
    /// Train on base relations only.
    pub open_set: bool,
    /// Defaults to the decoder mode when absent.
    pub objective: Option<Objective>,
    /// Use only the first `n` scenes.
    pub max_scenes: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 10.0,
            lr: 1e-4,
            lr_drop_epoch: 8,
            epochs: 12,
            weight_decay: 5e-2,
            freeze: Vec::new(),
            negative_pair_ratio: 3.0,
            seed: 0,
            batch_size: 8,
            grad_clip: 1.0,
            open_set: false,
            objective: None,
            max_scenes: None,
        }
    }
}

impl TrainConfig {
    pub fn frozen_groups(&self) -> Result<Vec<Group>, ConfigError> {
        self.freeze
            .iter()
            .map(|s| s.parse::<Group>().map_err(ConfigError::Invalid))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgdetConfig {
    pub epsilon: f64,
    pub jitter: usize,
}

impl Default for SgdetConfig {
    fn default() -> Self {
        Self { epsilon: 0.1, jitter: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
    pub subtask: Subtask,
    pub iou_threshold: f64,
    pub split_report: bool,
    pub per_scene_cap: usize,
    /// Segmenter used for `sgdet`; required for that subtask.
    pub segmenter: Option<SgdetConfig>,
    pub max_scenes: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            ks: vec![20, 50, 100],
            subtask: Subtask::Predcls,
            iou_threshold: 0.5,
            split_report: true,
            per_scene_cap: 300,
            segmenter: None,
            max_scenes: None,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.ks.is_empty() || self.ks.iter().any(|k| *k == 0) || self.ks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ConfigError::Invalid(format!(
                "eval.ks must be strictly ascending positive integers, got {:?}",
                self.ks
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub encoder: EncoderConfig,
    pub patchify: PatchifyConfig,
    pub relq: RelqConfig,
    pub selector: SelectorConfig,
    pub decoder: DecoderConfig,
    pub scoring: ScoringConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Config {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| ConfigError::Io(path.display().to_string(), e))?;
        let cfg: Config = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| ConfigError::Parse(path.display().to_string(), e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| ConfigError::Parse(path.display().to_string(), e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let d = self.encoder.dim;
        if d == 0 || d % 4 != 0 {
            return bad(format!("encoder.dim {d} must be a positive multiple of 4"));
        }
        if self.relq.layers == 0 {
            return bad("relq.layers must be >= 1".into());
        }
        if self.relq.e == 0 {
            return bad("relq.E must be >= 1".into());
        }
        for (name, heads) in [("relq.heads", self.relq.heads), ("decoder.heads", self.decoder.heads)] {
            if heads == 0 || d % heads != 0 {
                return bad(format!("{name} = {heads} must divide encoder.dim = {d}"));
            }
        }
        if !(0.0..=1.0).contains(&self.selector.theta) {
            return bad(format!("selector.theta {} outside [0, 1]", self.selector.theta));
        }
        if self.decoder.beam == 0 {
            return bad("decoder.beam must be >= 1".into());
        }
        let t = &self.train;
        if t.lambda < 0.0 || !(t.lr > 0.0) || t.epochs == 0 || t.batch_size == 0 {
            return bad("train requires lambda >= 0, lr > 0, epochs >= 1, batch_size >= 1".into());
        }
        t.frozen_groups()?;
        self.eval.validate()
    }

    /// Stable SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn objective(&self) -> Objective {
        self.train.objective.unwrap_or(match self.decoder.mode {
            DecodeMode::Generate => Objective::Generate,
            DecodeMode::Judge => Objective::Judge,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_published_hyperparameters() {
        let c = Config::default();
        assert_eq!(c.patchify.p, 8);
        assert_eq!(c.relq.e, 32);
        assert_eq!(c.relq.layers, 2);
        assert_eq!(c.selector.theta, 0.35);
        assert_eq!(c.train.lambda, 10.0);
        assert_eq!(c.train.lr, 1e-4);
        assert_eq!(c.train.weight_decay, 5e-2);
        assert_eq!((c.train.epochs, c.train.lr_drop_epoch), (12, 8));
        c.validate().unwrap();
    }

    #[test]
    fn toml_keys_parse() {
        let cfg: Config = toml::from_str(
            r#"
            [encoder]
            stride = 4
            dim = 32
            [patchify]
            p = 2
            [relq]
            layers = 1
            E = 8
            [selector]
            theta = 0.2
            [train]
            freeze = ["encoder", "decoder"]
            "#,
        )
        .unwrap();
        assert_eq!(cfg.relq.e, 8);
        assert_eq!(cfg.train.frozen_groups().unwrap(), vec![Group::Encoder, Group::Decoder]);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_freeze_target_is_rejected() {
        let mut cfg = Config::default();
        cfg.train.freeze = vec!["segmenter".into()];
        assert!(matches!(cfg.validate(), Err(ConfigError::Invalid(m)) if m.contains("segmenter")));
    }

    #[test]
    fn ks_must_ascend() {
        let mut cfg = Config::default();
        cfg.eval.ks = vec![50, 20];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = Config::default();
        let mut b = Config::default();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }
}
