//! Model providers behind the gateway.
//!
//! `HttpProvider` speaks a chat-completions style JSON API. `ScriptedProvider`
//! serves canned replies from a playbook file and exists to record
//! deterministic transcripts for tests and demos.

use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{GatewayError, PromptRequest, Role};

/// A source of model replies.
pub trait Provider: Send + Sync {
    fn send(&self, request: &PromptRequest) -> Result<String, ProviderFailure>;
    fn name(&self) -> &str;
}

/// A single failed provider call (the gateway owns retry/backoff).
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ProviderFailure(pub String);

/// Chat-completions HTTP provider with bearer auth.
pub struct HttpProvider {
    url: String,
    model: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpProvider {
    pub fn new(url: String, model: String, api_key: Option<String>) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .expect("reqwest client builds");
        Self {
            url,
            model,
            api_key,
            client,
        }
    }
}

impl Provider for HttpProvider {
    fn send(&self, request: &PromptRequest) -> Result<String, ProviderFailure> {
        let body = serde_json::json!({
            "model": self.model,
            "messages": [{"role": "user", "content": request.rendered_text}],
        });
        let mut builder = self.client.post(&self.url).json(&body);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder
            .send()
            .map_err(|e| ProviderFailure(format!("request failed: {e}")))?;
        let status = response.status();
        if !status.is_success() {
            return Err(ProviderFailure(format!("provider returned {status}")));
        }
        let value: serde_json::Value = response
            .json()
            .map_err(|e| ProviderFailure(format!("invalid provider response: {e}")))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| ProviderFailure("reply missing choices[0].message.content".into()))
    }

    fn name(&self) -> &str {
        "http"
    }
}

/// Playbook file for the scripted provider.
#[derive(Debug, Serialize, Deserialize)]
pub struct Playbook {
    pub rules: Vec<PlaybookRule>,
}

/// A reply rule: matched by role and an optional prompt substring, serving
/// its replies in order and repeating the last one when exhausted.
#[derive(Debug, Serialize, Deserialize)]
pub struct PlaybookRule {
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contains: Option<String>,
    #[serde(default)]
    pub replies: Vec<String>,
    /// Replies loaded from files, relative to the playbook location.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reply_files: Vec<PathBuf>,
}

struct LoadedRule {
    role: Role,
    contains: Option<String>,
    replies: Vec<String>,
    cursor: usize,
}

/// Deterministic canned-reply provider driven by a [`Playbook`].
pub struct ScriptedProvider {
    rules: Mutex<Vec<LoadedRule>>,
}

impl ScriptedProvider {
    pub fn from_file(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path).map_err(|source| GatewayError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let playbook: Playbook =
            serde_json::from_str(&text).map_err(|source| GatewayError::Json {
                path: path.display().to_string(),
                source,
            })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_playbook(playbook, base)
    }

    pub fn from_playbook(playbook: Playbook, base: &Path) -> Result<Self, GatewayError> {
        let mut rules = Vec::with_capacity(playbook.rules.len());
        for rule in playbook.rules {
            let mut replies = rule.replies;
            for file in &rule.reply_files {
                let full = base.join(file);
                let text = std::fs::read_to_string(&full).map_err(|source| GatewayError::Io {
                    path: full.display().to_string(),
                    source,
                })?;
                replies.push(text);
            }
            rules.push(LoadedRule {
                role: rule.role,
                contains: rule.contains,
                replies,
                cursor: 0,
            });
        }
        Ok(Self {
            rules: Mutex::new(rules),
        })
    }
}

impl Provider for ScriptedProvider {
    fn send(&self, request: &PromptRequest) -> Result<String, ProviderFailure> {
        let mut rules = self.rules.lock().expect("playbook mutex poisoned");
        for rule in rules.iter_mut() {
            if rule.role != request.role {
                continue;
            }
            if let Some(needle) = &rule.contains {
                if !request.rendered_text.contains(needle.as_str()) {
                    continue;
                }
            }
            if rule.replies.is_empty() {
                continue;
            }
            let reply = rule.replies[rule.cursor.min(rule.replies.len() - 1)].clone();
            if rule.cursor + 1 < rule.replies.len() {
                rule.cursor += 1;
            }
            return Ok(reply);
        }
        Err(ProviderFailure(format!(
            "no playbook rule matches role `{}` template `{}`",
            request.role, request.template_id
        )))
    }

    fn name(&self) -> &str {
        "scripted"
    }
}
