use std::path::{Path, PathBuf};

use anyhow::Context;
use chrono::{DateTime, Utc};
use codeorigin_core::checkpoint::{git_revision, write_file_atomic};
use codeorigin_core::TrainingConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Running,
    Succeeded,
    Failed,
}

/// Record of one CLI invocation, kept under `<workdir>/manifests/`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub workdir: PathBuf,
    pub config: TrainingConfig,
    pub config_hash: String,
    pub config_source: String,
    pub seed: u64,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub git_revision: String,
    pub started_at: DateTime<Utc>,
    pub finished_at: Option<DateTime<Utc>>,
    pub status: RunStatus,
    pub exit_code: Option<i32>,
    pub error: Option<String>,
}

impl RunManifest {
    pub fn start(command: &str, argv: Vec<String>, workdir: &Path, config: &TrainingConfig, config_source: String) -> Self {
        RunManifest {
            command: command.to_string(),
            argv,
            workdir: workdir.to_path_buf(),
            config: config.clone(),
            config_hash: config.hash(),
            config_source,
            seed: config.seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            git_revision: git_revision(),
            started_at: Utc::now(),
            finished_at: None,
            status: RunStatus::Running,
            exit_code: None,
            error: None,
        }
    }

    pub fn finish(&mut self, result: &anyhow::Result<()>) {
        self.finished_at = Some(Utc::now());
        match result {
            Ok(()) => {
                self.status = RunStatus::Succeeded;
                self.exit_code = Some(0);
            }
            Err(e) => {
                self.status = RunStatus::Failed;
                self.exit_code = Some(1);
                self.error = Some(format!("{e:#}"));
            }
        }
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        let json = serde_json::to_vec_pretty(self)?;
        write_file_atomic(path, &json)?;
        Ok(())
    }

    pub fn file_name(&self) -> String {
        format!(
            "{}-{}-{}.json",
            self.command,
            self.started_at.format("%Y%m%dT%H%M%S%.3fZ"),
            std::process::id()
        )
    }
}
