//! Single choke point for all model traffic.
//!
//! Every agent call goes through [`LlmGateway::complete`], which enforces
//! per-role token budgets, accounts usage, and — depending on the mode —
//! forwards to a provider, records the exchange, or replays a stored
//! transcript. Replay matches requests against stored digests, so any
//! nondeterminism upstream surfaces as [`GatewayError::ReplayMismatch`].

mod provider;
mod transcript;

pub use provider::{HttpProvider, Playbook, PlaybookRule, Provider, ProviderFailure, ScriptedProvider};
pub use transcript::TranscriptRecord;

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::paths::sha256_hex;
use crate::tokens::TokenCounter;

/// Agent identities allowed to issue prompts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Concept,
    Algorithm,
    Planner,
    Coder,
    Summarizer,
    Rag,
    Verifier,
}

impl Role {
    pub const ALL: [Role; 7] = [
        Role::Concept,
        Role::Algorithm,
        Role::Planner,
        Role::Coder,
        Role::Summarizer,
        Role::Rag,
        Role::Verifier,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Role::Concept => "concept",
            Role::Algorithm => "algorithm",
            Role::Planner => "planner",
            Role::Coder => "coder",
            Role::Summarizer => "summarizer",
            Role::Rag => "rag",
            Role::Verifier => "verifier",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A rendered prompt ready for the gateway.
#[derive(Debug, Clone)]
pub struct PromptRequest {
    pub role: Role,
    pub template_id: String,
    pub rendered_text: String,
    pub token_estimate: u64,
    /// Schema the caller expects the reply to satisfy; validation lives in
    /// the caller, this is carried for diagnostics only.
    pub schema_id: Option<String>,
}

impl PromptRequest {
    pub fn new(
        role: Role,
        template_id: &str,
        rendered_text: String,
        tokenizer: &dyn TokenCounter,
        schema_id: Option<&str>,
    ) -> Self {
        let token_estimate = tokenizer.count(&rendered_text);
        Self {
            role,
            template_id: template_id.to_string(),
            rendered_text,
            token_estimate,
            schema_id: schema_id.map(str::to_string),
        }
    }

    /// Stable digest of (role, template, prompt text); excludes timing.
    pub fn digest(&self) -> String {
        let mut bytes = Vec::with_capacity(self.rendered_text.len() + 32);
        bytes.extend_from_slice(self.role.as_str().as_bytes());
        bytes.push(0x1f);
        bytes.extend_from_slice(self.template_id.as_bytes());
        bytes.push(0x1f);
        bytes.extend_from_slice(self.rendered_text.as_bytes());
        sha256_hex(&bytes)
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("prompt for role `{role}` estimates {estimate} tokens, budget is {budget}")]
    OverBudget {
        role: Role,
        estimate: u64,
        budget: u64,
    },
    #[error("replay mismatch at position {position}: stored digest {expected} (template `{expected_template}`), request digest {actual} (template `{actual_template}`)")]
    ReplayMismatch {
        position: usize,
        expected: String,
        actual: String,
        expected_template: String,
        actual_template: String,
    },
    #[error("replay transcript exhausted at position {position}")]
    ReplayExhausted { position: usize },
    #[error("replay mode is strictly sequential; concurrent call rejected")]
    ConcurrentReplay,
    #[error("provider `{provider}` failed after {attempts} attempts: {last}")]
    Provider {
        provider: String,
        attempts: u32,
        last: String,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid json in {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GatewayMode {
    Record,
    Replay,
    Live,
}

/// Per-role token budgets with a shared default.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct RoleBudgets {
    pub default: u64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub overrides: BTreeMap<Role, u64>,
}

impl Default for RoleBudgets {
    fn default() -> Self {
        Self {
            default: 16_000,
            overrides: BTreeMap::new(),
        }
    }
}

impl RoleBudgets {
    pub fn budget_for(&self, role: Role) -> u64 {
        self.overrides.get(&role).copied().unwrap_or(self.default)
    }
}

/// Exponential backoff settings for live provider calls.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct BackoffConfig {
    pub attempts: u32,
    pub base_delay_ms: u64,
}

impl Default for BackoffConfig {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay_ms: 250,
        }
    }
}

/// Token and call totals, per role and overall.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq, Eq)]
pub struct UsageReport {
    pub per_role: BTreeMap<Role, RoleUsage>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq, Eq)]
pub struct RoleUsage {
    pub calls: u64,
    pub prompt_tokens: u64,
    pub reply_tokens: u64,
}

impl UsageReport {
    pub fn total_calls(&self) -> u64 {
        self.per_role.values().map(|u| u.calls).sum()
    }

    pub fn total_tokens(&self) -> u64 {
        self.per_role
            .values()
            .map(|u| u.prompt_tokens + u.reply_tokens)
            .sum()
    }

    pub fn merge(&mut self, other: &UsageReport) {
        for (role, usage) in &other.per_role {
            let entry = self.per_role.entry(*role).or_default();
            entry.calls += usage.calls;
            entry.prompt_tokens += usage.prompt_tokens;
            entry.reply_tokens += usage.reply_tokens;
        }
    }
}

struct GatewayState {
    /// Records appended (record/live) or consumed (replay) so far.
    seen: Vec<TranscriptRecord>,
    /// Stored transcript for replay.
    stored: Vec<TranscriptRecord>,
    position: usize,
}

/// Provider-agnostic request/response with token accounting and
/// deterministic record/replay.
pub struct LlmGateway {
    mode: GatewayMode,
    provider: Option<Box<dyn Provider>>,
    transcript_path: Option<PathBuf>,
    budgets: RoleBudgets,
    backoff: BackoffConfig,
    tokenizer: std::sync::Arc<dyn TokenCounter>,
    state: Mutex<GatewayState>,
}

impl LlmGateway {
    /// Replay mode: replies come from the stored transcript, in order.
    pub fn replay(
        transcript_path: PathBuf,
        budgets: RoleBudgets,
        tokenizer: std::sync::Arc<dyn TokenCounter>,
    ) -> Result<Self, GatewayError> {
        let stored = transcript::read_jsonl(&transcript_path)?;
        Ok(Self {
            mode: GatewayMode::Replay,
            provider: None,
            transcript_path: Some(transcript_path),
            budgets,
            backoff: BackoffConfig::default(),
            tokenizer,
            state: Mutex::new(GatewayState {
                seen: Vec::new(),
                stored,
                position: 0,
            }),
        })
    }

    /// Record mode: forwards to the provider and appends every exchange to
    /// the transcript file.
    pub fn record(
        provider: Box<dyn Provider>,
        transcript_path: PathBuf,
        budgets: RoleBudgets,
        backoff: BackoffConfig,
        tokenizer: std::sync::Arc<dyn TokenCounter>,
    ) -> Self {
        Self {
            mode: GatewayMode::Record,
            provider: Some(provider),
            transcript_path: Some(transcript_path),
            budgets,
            backoff,
            tokenizer,
            state: Mutex::new(GatewayState {
                seen: Vec::new(),
                stored: Vec::new(),
                position: 0,
            }),
        }
    }

    /// Live mode: forwards to the provider without writing a transcript file
    /// (usage is still accounted in memory).
    pub fn live(
        provider: Box<dyn Provider>,
        budgets: RoleBudgets,
        backoff: BackoffConfig,
        tokenizer: std::sync::Arc<dyn TokenCounter>,
    ) -> Self {
        Self {
            mode: GatewayMode::Live,
            provider: Some(provider),
            transcript_path: None,
            budgets,
            backoff,
            tokenizer,
            state: Mutex::new(GatewayState {
                seen: Vec::new(),
                stored: Vec::new(),
                position: 0,
            }),
        }
    }

    pub fn mode(&self) -> GatewayMode {
        self.mode
    }

    pub fn tokenizer(&self) -> &std::sync::Arc<dyn TokenCounter> {
        &self.tokenizer
    }

    pub fn budgets(&self) -> &RoleBudgets {
        &self.budgets
    }

    /// Completes a prompt according to the gateway mode.
    pub fn complete(&self, request: &PromptRequest) -> Result<String, GatewayError> {
        let budget = self.budgets.budget_for(request.role);
        if request.token_estimate > budget {
            return Err(GatewayError::OverBudget {
                role: request.role,
                estimate: request.token_estimate,
                budget,
            });
        }
        match self.mode {
            GatewayMode::Replay => self.complete_replay(request),
            GatewayMode::Record | GatewayMode::Live => self.complete_forward(request),
        }
    }

    fn complete_replay(&self, request: &PromptRequest) -> Result<String, GatewayError> {
        let mut state = self
            .state
            .try_lock()
            .map_err(|_| GatewayError::ConcurrentReplay)?;
        let position = state.position;
        if position >= state.stored.len() {
            return Err(GatewayError::ReplayExhausted { position });
        }
        let digest = request.digest();
        let stored = &state.stored[position];
        if stored.digest != digest {
            return Err(GatewayError::ReplayMismatch {
                position,
                expected: stored.digest.clone(),
                actual: digest,
                expected_template: stored.template_id.clone(),
                actual_template: request.template_id.clone(),
            });
        }
        let record = stored.clone();
        state.position += 1;
        state.seen.push(record.clone());
        Ok(record.reply_text)
    }

    fn complete_forward(&self, request: &PromptRequest) -> Result<String, GatewayError> {
        let provider = self
            .provider
            .as_ref()
            .expect("record/live gateway holds a provider");
        let start = Instant::now();
        let mut last_failure = String::new();
        let mut reply: Option<String> = None;
        let attempts = self.backoff.attempts.max(1);
        for attempt in 0..attempts {
            match provider.send(request) {
                Ok(text) => {
                    reply = Some(text);
                    break;
                }
                Err(failure) => {
                    last_failure = failure.0;
                    if attempt + 1 < attempts {
                        let delay = self.backoff.base_delay_ms << attempt;
                        std::thread::sleep(Duration::from_millis(delay));
                    }
                }
            }
        }
        let Some(reply) = reply else {
            return Err(GatewayError::Provider {
                provider: provider.name().to_string(),
                attempts,
                last: last_failure,
            });
        };
        let latency_ms = start.elapsed().as_millis() as u64;
        let reply_tokens = self.tokenizer.count(&reply);

        let mut state = self.state.lock().expect("gateway mutex poisoned");
        let record = TranscriptRecord {
            seq: state.seen.len(),
            role: request.role,
            template_id: request.template_id.clone(),
            digest: request.digest(),
            prompt_tokens: request.token_estimate,
            reply_tokens,
            latency_ms,
            prompt_text: request.rendered_text.clone(),
            reply_text: reply.clone(),
        };
        if self.mode == GatewayMode::Record {
            if let Some(path) = &self.transcript_path {
                transcript::append_jsonl(path, &record)?;
            }
        }
        state.seen.push(record);
        Ok(reply)
    }

    /// Per-role token and call totals over the records seen so far.
    pub fn usage_report(&self) -> UsageReport {
        let state = self.state.lock().expect("gateway mutex poisoned");
        let mut report = UsageReport::default();
        for record in &state.seen {
            let entry = report.per_role.entry(record.role).or_default();
            entry.calls += 1;
            entry.prompt_tokens += record.prompt_tokens;
            entry.reply_tokens += record.reply_tokens;
        }
        report
    }

    /// Copy of the records seen so far (consumed in replay, appended in
    /// record/live).
    pub fn records(&self) -> Vec<TranscriptRecord> {
        self.state
            .lock()
            .expect("gateway mutex poisoned")
            .seen
            .clone()
    }
}
