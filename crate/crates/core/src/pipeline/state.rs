//! Checkpointed run state: which phases are done, with artifact digests
//! that must match the workspace on resume.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::gateway::UsageReport;
use crate::paths::{file_digest, tree_digest};

use super::PipelineError;

pub const STATE_FILE: &str = "state.json";
const LOCK_FILE: &str = ".lock";

/// Pipeline phases in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Indexed,
    Blueprinted,
    Generated,
    Verified,
}

impl Phase {
    pub const ALL: [Phase; 4] = [
        Phase::Indexed,
        Phase::Blueprinted,
        Phase::Generated,
        Phase::Verified,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Phase::Indexed => "indexed",
            Phase::Blueprinted => "blueprinted",
            Phase::Generated => "generated",
            Phase::Verified => "verified",
        }
    }

    pub fn order(&self) -> usize {
        match self {
            Phase::Indexed => 0,
            Phase::Blueprinted => 1,
            Phase::Generated => 2,
            Phase::Verified => 3,
        }
    }
}

/// Persistent checkpoint: last completed phase, artifact digests, and
/// per-phase usage accumulated so far.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunState {
    pub phase: Option<Phase>,
    pub artifact_digests: BTreeMap<String, String>,
    pub usage_by_phase: BTreeMap<String, UsageReport>,
    pub warnings: Vec<String>,
    pub resumable: bool,
}

impl RunState {
    pub fn load(workspace: &Path) -> Result<Self, PipelineError> {
        let path = workspace.join(STATE_FILE);
        let text = fs::read_to_string(&path).map_err(|e| {
            PipelineError::Config(format!("no run state at {}: {e}", path.display()))
        })?;
        serde_json::from_str(&text)
            .map_err(|e| PipelineError::Config(format!("corrupt run state: {e}")))
    }

    pub fn save(&self, workspace: &Path) -> Result<(), PipelineError> {
        let path = workspace.join(STATE_FILE);
        let json = serde_json::to_string_pretty(self).expect("state serializes");
        fs::write(&path, json).map_err(|e| PipelineError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    pub fn completed(&self, phase: Phase) -> bool {
        self.phase.map(|p| p.order() >= phase.order()).unwrap_or(false)
    }

    /// Digest keys that must still match the workspace given the current
    /// phase (the generated repo is legitimately rewritten by verification).
    fn expected_digest_keys(&self) -> Vec<&'static str> {
        let mut keys = Vec::new();
        if self.completed(Phase::Indexed) {
            keys.push("index/index.json");
        }
        if self.completed(Phase::Blueprinted) {
            keys.push("blueprint.json");
        }
        if self.completed(Phase::Generated) {
            keys.extend(["rag_index.json", "memory", "generation_stats.json"]);
            if !self.completed(Phase::Verified) {
                keys.push("repo@generated");
            }
        }
        if self.completed(Phase::Verified) {
            keys.extend(["verify_log.json", "repo@verified", "report.json"]);
        }
        keys
    }

    /// Recomputes and stores the digest for one artifact key.
    pub fn record_digest(&mut self, workspace: &Path, key: &str) -> Result<(), PipelineError> {
        let digest = compute_digest(workspace, key)?;
        self.artifact_digests.insert(key.to_string(), digest);
        Ok(())
    }

    /// Verifies every digest expected at this phase against the workspace.
    pub fn verify_digests(&self, workspace: &Path) -> Result<(), PipelineError> {
        for key in self.expected_digest_keys() {
            let stored = self.artifact_digests.get(key).ok_or_else(|| {
                PipelineError::DigestMismatch {
                    artifact: format!("{key} (missing from state)"),
                }
            })?;
            let actual = compute_digest(workspace, key)?;
            if *stored != actual {
                return Err(PipelineError::DigestMismatch {
                    artifact: key.to_string(),
                });
            }
        }
        Ok(())
    }
}

fn compute_digest(workspace: &Path, key: &str) -> Result<String, PipelineError> {
    let target = match key {
        "memory" => workspace.join("memory"),
        "repo@generated" | "repo@verified" => workspace.join("repo"),
        other => workspace.join(other),
    };
    let digest = if target.is_dir() {
        tree_digest(&target)
    } else {
        file_digest(&target)
    }
    .map_err(|e| PipelineError::DigestMismatch {
        artifact: format!("{key}: {e}"),
    })?;
    Ok(digest)
}

/// Exclusive workspace lock, released on drop.
pub struct WorkspaceLock {
    path: PathBuf,
}

impl WorkspaceLock {
    pub fn acquire(workspace: &Path) -> Result<Self, PipelineError> {
        let path = workspace.join(LOCK_FILE);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(PipelineError::Locked(workspace.to_path_buf()))
            }
            Err(e) => Err(PipelineError::Io {
                path: path.display().to_string(),
                source: e,
            }),
        }
    }
}

impl Drop for WorkspaceLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
