//! Execution traces: captured sandbox runs with parsed error records.

use std::path::Path;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::sandbox::{Sandbox, SandboxError};
use crate::paths::sha256_hex;

/// One attributed error extracted from stderr.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct ErrorRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line: Option<u32>,
    pub message: String,
}

/// Captured output of one sandboxed entry-point run.
///
/// Under the default success rule, `error_records` is empty exactly when the
/// exit code is zero.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub command: String,
    pub stdout: String,
    pub stderr: String,
    pub exit_code: i32,
    pub duration_secs: f64,
    pub timed_out: bool,
    pub error_records: Vec<ErrorRecord>,
}

impl ExecutionTrace {
    pub fn is_clean(&self) -> bool {
        self.exit_code == 0 && self.error_records.is_empty()
    }

    /// Stable digest over the deterministic fields (duration excluded).
    pub fn digest(&self) -> String {
        let mut bytes = Vec::new();
        for part in [
            self.command.as_str(),
            self.stdout.as_str(),
            self.stderr.as_str(),
        ] {
            bytes.extend_from_slice(part.as_bytes());
            bytes.push(0x1f);
        }
        bytes.extend_from_slice(self.exit_code.to_string().as_bytes());
        for record in &self.error_records {
            bytes.push(0x1e);
            bytes.extend_from_slice(
                serde_json::to_string(record).expect("record serializes").as_bytes(),
            );
        }
        sha256_hex(&bytes)
    }
}

/// Configurable stderr parsing: a frame pattern attributing file/line and
/// message patterns marking the error itself.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(default)]
pub struct ErrorPatterns {
    /// Captures named groups `file` and `line` from traceback frames.
    pub frame_pattern: String,
    /// Each captures a named group `message`.
    pub message_patterns: Vec<String>,
}

impl Default for ErrorPatterns {
    fn default() -> Self {
        Self {
            frame_pattern: r#"^\s*File "(?P<file>[^"]+)", line (?P<line>\d+)"#.to_string(),
            message_patterns: vec![
                r"^(?P<message>[A-Za-z_][A-Za-z0-9_.]*(?:Error|Exception|Interrupt|Exit)\b:?.*)$"
                    .to_string(),
                r"^.+?: error: (?P<message>.+)$".to_string(),
            ],
        }
    }
}

/// Parses stderr into attributed error records.
///
/// The latest frame match provides file/line attribution for the next
/// message match. When the exit code is nonzero and nothing matched, a
/// single unattributed record is synthesized from the last stderr line so
/// the success rule (clean ⇔ exit 0) holds.
pub fn parse_error_records(
    stderr: &str,
    exit_code: i32,
    patterns: &ErrorPatterns,
) -> Vec<ErrorRecord> {
    if exit_code == 0 {
        return Vec::new();
    }
    let frame_re = Regex::new(&patterns.frame_pattern).ok();
    let message_res: Vec<Regex> = patterns
        .message_patterns
        .iter()
        .filter_map(|p| Regex::new(p).ok())
        .collect();

    let mut records = Vec::new();
    let mut last_frame: Option<(String, Option<u32>)> = None;
    for line in stderr.lines() {
        if let Some(frame_re) = &frame_re {
            if let Some(caps) = frame_re.captures(line) {
                let file = caps.name("file").map(|m| m.as_str().to_string());
                let line_no = caps
                    .name("line")
                    .and_then(|m| m.as_str().parse::<u32>().ok());
                if let Some(file) = file {
                    last_frame = Some((file, line_no));
                }
                continue;
            }
        }
        for message_re in &message_res {
            if let Some(caps) = message_re.captures(line) {
                let message = caps
                    .name("message")
                    .map(|m| m.as_str().to_string())
                    .unwrap_or_else(|| line.to_string());
                let (file, line_no) = match last_frame.take() {
                    Some((f, l)) => (Some(f), l),
                    None => (None, None),
                };
                records.push(ErrorRecord {
                    file,
                    line: line_no,
                    message,
                });
                break;
            }
        }
    }
    if records.is_empty() {
        let last_line = stderr
            .lines()
            .rev()
            .find(|l| !l.trim().is_empty())
            .map(str::to_string)
            .unwrap_or_else(|| format!("exit code {exit_code}"));
        records.push(ErrorRecord {
            file: None,
            line: None,
            message: last_line,
        });
    }
    records
}

/// Runs the entry command inside the sandbox and captures a trace.
///
/// A timeout yields a synthetic timeout error record and the timeout exit
/// code.
pub fn execute(
    sandbox: &dyn Sandbox,
    repo_rel: &Path,
    entry: &str,
    timeout: Duration,
    patterns: &ErrorPatterns,
) -> Result<ExecutionTrace, SandboxError> {
    let raw = sandbox.run(entry, Some(repo_rel), timeout)?;
    let mut error_records = if raw.timed_out {
        vec![ErrorRecord {
            file: None,
            line: None,
            message: format!("execution timed out after {:.0}s", timeout.as_secs_f64()),
        }]
    } else {
        parse_error_records(&raw.stderr, raw.exit_code, patterns)
    };
    // Interpreters report script paths as invoked or absolutized; normalize
    // to repo-relative so records name patchable files.
    let repo_prefix = format!("{}/", sandbox.root().join(repo_rel).display());
    for record in &mut error_records {
        if let Some(file) = &record.file {
            if let Some(stripped) = file.strip_prefix(&repo_prefix) {
                record.file = Some(stripped.to_string());
            }
        }
    }
    Ok(ExecutionTrace {
        command: entry.to_string(),
        stdout: raw.stdout,
        stderr: raw.stderr,
        exit_code: raw.exit_code,
        duration_secs: raw.duration.as_secs_f64(),
        timed_out: raw.timed_out,
        error_records,
    })
}
