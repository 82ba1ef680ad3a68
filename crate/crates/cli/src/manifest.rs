//! `manifest.json`: what a run did, how long each stage took and what it wrote.
//!
//! Field names are stable:
//!
//! - `tool`, `version`, `command`
//! - `status`: `"ok"` or `"failed"`; `exit_code`
//! - `config`: snapshot of the effective configuration
//! - `stages[]`: `name`, `status`, `wall_time_s`, `outputs[]`, `message`
//! - `solvers[]`: `solver`, `status`, `failure_reason`, `iterations`, `final_residual_ratio`
//! - `files[]`: every file in the output directory, `manifest.json` included

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub status: String,
    pub wall_time_s: f64,
    pub outputs: Vec<String>,
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverRecord {
    pub solver: String,
    pub status: String,
    pub failure_reason: Option<String>,
    pub iterations: usize,
    pub final_residual_ratio: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub status: String,
    pub exit_code: i32,
    pub config: serde_json::Value,
    pub stages: Vec<StageRecord>,
    pub solvers: Vec<SolverRecord>,
    pub files: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            status: "running".into(),
            exit_code: 0,
            config,
            stages: Vec::new(),
            solvers: Vec::new(),
            files: Vec::new(),
        }
    }

    #[cfg(test)]
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Runs one stage, recording its time, outputs and any error.
    pub fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut Vec<PathBuf>) -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let mut outputs = Vec::new();
        let res = f(&mut outputs);
        self.stages.push(StageRecord {
            name: name.into(),
            status: if res.is_ok() { "ok" } else { "failed" }.into(),
            wall_time_s: start.elapsed().as_secs_f64(),
            outputs: outputs.iter().map(|p| file_name(p)).collect(),
            message: res.as_ref().err().map(|e| format!("{e:#}")),
        });
        res
    }

    /// Lists the directory contents and writes the manifest into it.
    pub fn finish(&mut self, dir: &Path, exit_code: i32) -> Result<PathBuf> {
        self.exit_code = exit_code;
        self.status = if exit_code == 0 { "ok" } else { "failed" }.into();
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut files = vec![MANIFEST_NAME.to_string()];
        for entry in std::fs::read_dir(dir)? {
            let entry = entry?;
            if entry.file_type()?.is_file() {
                let name = entry.file_name().to_string_lossy().into_owned();
                if name != MANIFEST_NAME {
                    files.push(name);
                }
            }
        }
        files.sort();
        self.files = files;
        let path = dir.join(MANIFEST_NAME);
        std::fs::write(&path, serde_json::to_string_pretty(self)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

fn file_name(p: &Path) -> String {
    p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned())
}
