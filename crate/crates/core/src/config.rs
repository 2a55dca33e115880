//! Training configuration with layered overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classify::HeadKind;
use crate::encoder::{EncoderKind, EncoderSize};
use crate::error::{Error, Result};
use crate::optim::AdamWConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_ratio: f64,
    pub max_seq_len: usize,
    pub max_dfg_nodes: usize,
    pub batch_contrastive: usize,
    pub batch_classify: usize,
    pub tau: f64,
    pub proj_hidden: usize,
    pub proj_out: usize,
    pub cls_hidden: usize,
    pub epochs_stage1: usize,
    pub epochs_stage2: usize,
    pub seed: u64,
    pub head_kind: HeadKind,
    /// Run the contrastive stage before classification.
    pub contrastive: bool,
    pub strip_comments: bool,
    pub strip_docstrings: bool,
    pub encoder_kind: EncoderKind,
    pub encoder_size: EncoderSize,
    /// Directory holding pretrained weights and vocabulary files.
    pub encoder_weights: Option<PathBuf>,
    pub dev_fraction: f64,
    pub threshold: f64,
    pub eval_batch: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            lr: 2e-5,
            weight_decay: 0.01,
            warmup_ratio: 0.10,
            max_seq_len: 512,
            max_dfg_nodes: 64,
            batch_contrastive: 32,
            batch_classify: 64,
            tau: 0.07,
            proj_hidden: 512,
            proj_out: 128,
            cls_hidden: 256,
            epochs_stage1: 10,
            epochs_stage2: 10,
            seed: 42,
            head_kind: HeadKind::Mlp,
            contrastive: true,
            strip_comments: true,
            strip_docstrings: true,
            encoder_kind: EncoderKind::GraphCodeBert,
            encoder_size: EncoderSize::Base,
            encoder_weights: None,
            dev_fraction: 0.10,
            threshold: 0.5,
            eval_batch: 16,
        }
    }
}

impl TrainingConfig {
    /// Reads a TOML file; missing keys keep their defaults.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainingConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `key=value` overrides using TOML value syntax, falling back to
    /// a bare string when the value does not parse.
    pub fn with_overrides<'a>(&self, pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut table = toml::Value::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        let map = table.as_table_mut().expect("config serializes to a table");
        for (key, raw) in pairs {
            let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(raw.to_string()));
            map.insert(key.to_string(), value);
        }
        let cfg: TrainingConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.tau > 0.0) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if !(0.0..=1.0).contains(&self.warmup_ratio) {
            return bad(format!("warmup_ratio must be in [0, 1], got {}", self.warmup_ratio));
        }
        if !(0.0..1.0).contains(&self.dev_fraction) {
            return bad(format!("dev_fraction must be in [0, 1), got {}", self.dev_fraction));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad(format!("threshold must be in (0, 1), got {}", self.threshold));
        }
        if self.batch_contrastive < 4 || self.batch_contrastive % 2 != 0 {
            return bad(format!("batch_contrastive must be even and >= 4, got {}", self.batch_contrastive));
        }
        if self.batch_classify == 0 || self.eval_batch == 0 {
            return bad("batch sizes must be positive".into());
        }
        if !(3..=crate::tokenize::MAX_SEQ_LEN).contains(&self.max_seq_len) {
            return bad(format!("max_seq_len must be in [3, 512], got {}", self.max_seq_len));
        }
        Ok(())
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    /// Keys whose values differ from the defaults.
    pub fn overrides(&self) -> Vec<String> {
        let here = toml::Value::try_from(self).expect("config serializes");
        let base = toml::Value::try_from(Self::default()).expect("config serializes");
        let (here, base) = (here.as_table().unwrap(), base.as_table().unwrap());
        let mut keys: Vec<String> = here
            .iter()
            .filter(|(k, v)| base.get(*k) != Some(*v))
            .map(|(k, _)| k.clone())
            .collect();
        if self.encoder_weights.is_some() && !keys.iter().any(|k| k == "encoder_weights") {
            keys.push("encoder_weights".into());
        }
        keys.sort();
        keys
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_hyperparameter_table() {
        let c = TrainingConfig::default();
        assert_eq!((c.lr, c.warmup_ratio, c.tau), (2e-5, 0.10, 0.07));
        assert_eq!((c.batch_contrastive, c.batch_classify), (32, 64));
        assert_eq!((c.proj_hidden, c.proj_out, c.max_seq_len), (512, 128, 512));
        assert!(c.overrides().is_empty());
    }

    #[test]
    fn layering_file_then_flags() {
        let file = TrainingConfig::from_toml("seed = 7\nhead_kind = \"linear\"\nlr = 1e-4\n").unwrap();
        assert_eq!(file.seed, 7);
        assert_eq!(file.head_kind, HeadKind::Linear);
        assert_eq!(file.batch_classify, 64);
        let flags = file.with_overrides([("seed", "9"), ("strip_comments", "false")]).unwrap();
        assert_eq!(flags.seed, 9);
        assert!(!flags.strip_comments);
        assert_eq!(flags.lr, 1e-4);
        assert_eq!(flags.overrides(), vec!["head_kind", "lr", "seed", "strip_comments"]);
        let kind = flags.with_overrides([("encoder_kind", "codebert")]).unwrap();
        assert_eq!(kind.encoder_kind, EncoderKind::CodeBert);
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(TrainingConfig::from_toml("nope = 1").is_err());
        assert!(TrainingConfig::from_toml("tau = 0.0").is_err());
        assert!(TrainingConfig::from_toml("batch_contrastive = 7").is_err());
        assert!(TrainingConfig::default().with_overrides([("lr", "abc")]).is_err());
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = TrainingConfig::default();
        assert_eq!(a.hash(), TrainingConfig::default().hash());
        let b = a.with_overrides([("seed", "1")]).unwrap();
        assert_ne!(a.hash(), b.hash());
        let back = TrainingConfig::from_toml(&b.to_toml()).unwrap();
        assert_eq!(back, b);
    }
}
