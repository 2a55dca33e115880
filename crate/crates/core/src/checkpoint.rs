//! Checkpoint directories and their provenance record.
//!
//! ```text
//! <dir>/provenance.json
//! <dir>/config.toml          effective training config
//! <dir>/encoder/             config.json + model.safetensors
//! <dir>/tokenizer/           vocab.json + merges.txt (BPE only)
//! <dir>/projection.*.npy     stage 1
//! <dir>/classifier.*.npy     stage 2
//! <dir>/training_log.csv
//! ```

use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};

use crate::classify::HeadKind;
use crate::config::TrainingConfig;
use crate::encoder::{EncoderKind, EncoderSize};
use crate::error::{Error, Result};
use crate::tokenize::TokenizerKind;

pub const PROVENANCE_FILE: &str = "provenance.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointProvenance {
    pub stage: u8,
    pub model_version: String,
    pub head_kind: Option<HeadKind>,
    pub contrastive: bool,
    pub strip_comments: bool,
    pub strip_docstrings: bool,
    pub encoder_kind: EncoderKind,
    pub encoder_size: EncoderSize,
    pub tokenizer: TokenizerKind,
    pub max_seq_len: usize,
    pub max_dfg_nodes: usize,
    pub threshold: f64,
    pub seed: u64,
    pub config_hash: String,
    /// Config keys that differ from the defaults.
    pub overrides: Vec<String>,
    pub git_revision: String,
    pub dataset: Option<String>,
    pub dataset_version: Option<String>,
    /// Version of the checkpoint this one was trained from.
    pub parent: Option<String>,
}

impl CheckpointProvenance {
    pub fn new(stage: u8, config: &TrainingConfig, tokenizer: TokenizerKind) -> Self {
        let hash = config.hash();
        let head = (stage == 2).then_some(config.head_kind);
        let model_version = format!(
            "{}-{}-s{stage}-{}",
            config.encoder_kind,
            head.map_or("proj", HeadKind::as_str),
            &hash[..12]
        );
        CheckpointProvenance {
            stage,
            model_version,
            head_kind: head,
            contrastive: config.contrastive,
            strip_comments: config.strip_comments,
            strip_docstrings: config.strip_docstrings,
            encoder_kind: config.encoder_kind,
            encoder_size: config.encoder_size,
            tokenizer,
            max_seq_len: config.max_seq_len,
            max_dfg_nodes: config.max_dfg_nodes,
            threshold: config.threshold,
            seed: config.seed,
            config_hash: hash,
            overrides: config.overrides(),
            git_revision: git_revision(),
            dataset: None,
            dataset_version: None,
            parent: None,
        }
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let p = dir.join(PROVENANCE_FILE);
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", p.display())))
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let p = dir.join(PROVENANCE_FILE);
        std::fs::write(&p, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&p, e))
    }
}

/// Current commit of the working directory, or `"unknown"`.
pub fn git_revision() -> String {
    if let Ok(rev) = std::env::var("CODEORIGIN_GIT_REVISION") {
        return rev;
    }
    Command::new("git")
        .args(["rev-parse", "--short=12", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

/// Builds a directory under a temporary name beside `dest` and renames it
/// into place, so readers never observe a partial checkpoint.
pub fn write_dir_atomic(dest: &Path, fill: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let parent = dest
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    let name = dest
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("bad output path {}", dest.display())))?
        .to_string_lossy()
        .into_owned();
    let tmp = parent.join(format!(".{name}.tmp-{}", std::process::id()));
    if tmp.exists() {
        std::fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    }
    std::fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    if let Err(e) = fill(&tmp) {
        let _ = std::fs::remove_dir_all(&tmp);
        return Err(e);
    }
    let old: Option<PathBuf> = dest.exists().then(|| parent.join(format!(".{name}.old-{}", std::process::id())));
    if let Some(old) = &old {
        std::fs::rename(dest, old).map_err(|e| Error::io(dest, e))?;
    }
    std::fs::rename(&tmp, dest).map_err(|e| Error::io(dest, e))?;
    if let Some(old) = old {
        let _ = std::fs::remove_dir_all(old);
    }
    Ok(())
}

/// Writes a file through a temporary sibling and a rename.
pub fn write_file_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!("tmp-{}", std::process::id()));
    std::fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
