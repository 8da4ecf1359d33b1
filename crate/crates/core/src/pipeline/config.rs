//! Pipeline configuration: one structured file (TOML or JSON) drives a run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::AnalysisConfig;
use crate::codemem::CodememConfig;
use crate::coderag::{RagConfig, RetrievalPolicy};
use crate::gateway::{BackoffConfig, GatewayMode, RoleBudgets};
use crate::templates::TemplateSet;
use crate::tokens::TokenizerConfig;
use crate::verify::VerifierConfig;

use super::{Phase, PipelineError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Http,
    Scripted,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct ProviderSettings {
    pub kind: ProviderKind,
    /// Chat-completions endpoint (http provider).
    pub url: Option<String>,
    pub model: Option<String>,
    /// Environment variable holding the API key (http provider).
    pub api_key_env: Option<String>,
    /// Playbook file (scripted provider).
    pub playbook: Option<PathBuf>,
}

impl Default for ProviderSettings {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Http,
            url: None,
            model: None,
            api_key_env: None,
            playbook: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct GatewaySettings {
    pub mode: GatewayMode,
    /// Where replay transcripts are read from; defaults to
    /// `<workspace>/transcripts`.
    pub transcript_dir: Option<PathBuf>,
    pub provider: ProviderSettings,
    pub budgets: RoleBudgets,
    pub backoff: BackoffConfig,
}

impl Default for GatewaySettings {
    fn default() -> Self {
        Self {
            mode: GatewayMode::Replay,
            transcript_dir: None,
            provider: ProviderSettings::default(),
            budgets: RoleBudgets::default(),
            backoff: BackoffConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct RagSettings {
    /// Master switch for retrieval during generation.
    pub enabled: bool,
    /// Local reference repositories to index.
    pub repos: Vec<PathBuf>,
    #[serde(flatten)]
    pub config: RagConfig,
    pub policy: RetrievalPolicy,
}

/// Everything a pipeline run needs, loadable from TOML or JSON.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct PipelineConfig {
    /// Source document (markdown or plain text).
    pub input: PathBuf,
    /// Document format override; inferred from the extension when absent.
    pub format: Option<String>,
    pub workspace: PathBuf,
    pub gateway: GatewaySettings,
    pub tokenizer: TokenizerConfig,
    pub analysis: AnalysisConfig,
    pub codemem: CodememConfig,
    pub rag: RagSettings,
    pub verifier: VerifierConfig,
    /// Directory of `<template_id>.txt` prompt overrides.
    pub templates_dir: Option<PathBuf>,
    /// Stop after this phase and persist the checkpoint (debugging hook).
    pub stop_after: Option<Phase>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            input: PathBuf::new(),
            format: None,
            workspace: PathBuf::new(),
            gateway: GatewaySettings::default(),
            tokenizer: TokenizerConfig::default(),
            analysis: AnalysisConfig::default(),
            codemem: CodememConfig::default(),
            rag: RagSettings::default(),
            verifier: VerifierConfig::default(),
            templates_dir: None,
            stop_after: None,
        }
    }
}

impl PipelineConfig {
    /// Loads a config file; the extension picks the parser (`.toml` or
    /// `.json`).
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            PipelineError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        let cfg: PipelineConfig = match ext {
            "toml" => toml::from_str(&text)
                .map_err(|e| PipelineError::Config(format!("invalid toml config: {e}")))?,
            "json" => serde_json::from_str(&text)
                .map_err(|e| PipelineError::Config(format!("invalid json config: {e}")))?,
            other => {
                return Err(PipelineError::Config(format!(
                    "unsupported config extension `{other}` (expected toml or json)"
                )))
            }
        };
        Ok(cfg)
    }

    /// Checks the config invariants before any phase runs.
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.input.as_os_str().is_empty() || !self.input.is_file() {
            return Err(PipelineError::Config(format!(
                "input document `{}` does not exist",
                self.input.display()
            )));
        }
        if self.workspace.as_os_str().is_empty() {
            return Err(PipelineError::Config("workspace path is empty".into()));
        }
        std::fs::create_dir_all(&self.workspace).map_err(|e| {
            PipelineError::Config(format!(
                "workspace `{}` is not writable: {e}",
                self.workspace.display()
            ))
        })?;
        let probe = self.workspace.join(".write_probe");
        std::fs::write(&probe, b"ok").map_err(|e| {
            PipelineError::Config(format!(
                "workspace `{}` is not writable: {e}",
                self.workspace.display()
            ))
        })?;
        let _ = std::fs::remove_file(&probe);

        if self.verifier.max_iter < 1 {
            return Err(PipelineError::Config("verifier.max_iter must be >= 1".into()));
        }
        if self.gateway.budgets.default == 0
            || self.gateway.budgets.overrides.values().any(|b| *b == 0)
        {
            return Err(PipelineError::Config("token budgets must be positive".into()));
        }
        if self.codemem.context_budget == 0 {
            return Err(PipelineError::Config("codemem.context_budget must be positive".into()));
        }
        match self.gateway.mode {
            GatewayMode::Replay => {}
            GatewayMode::Record | GatewayMode::Live => match self.gateway.provider.kind {
                ProviderKind::Http => {
                    if self.gateway.provider.url.is_none() || self.gateway.provider.model.is_none()
                    {
                        return Err(PipelineError::Config(
                            "http provider requires url and model".into(),
                        ));
                    }
                }
                ProviderKind::Scripted => {
                    if self.gateway.provider.playbook.is_none() {
                        return Err(PipelineError::Config(
                            "scripted provider requires a playbook path".into(),
                        ));
                    }
                }
            },
        }
        Ok(())
    }

    pub fn load_templates(&self) -> Result<TemplateSet, PipelineError> {
        match &self.templates_dir {
            Some(dir) => TemplateSet::with_overrides(dir).map_err(|e| {
                PipelineError::Config(format!(
                    "cannot load templates from {}: {e}",
                    dir.display()
                ))
            }),
            None => Ok(TemplateSet::default()),
        }
    }

    /// Directory replay transcripts are read from.
    pub fn transcript_source(&self) -> PathBuf {
        self.gateway
            .transcript_dir
            .clone()
            .unwrap_or_else(|| self.workspace.join("transcripts"))
    }
}
