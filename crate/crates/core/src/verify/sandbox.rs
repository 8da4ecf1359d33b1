//! Path-confined process sandbox with an append-only audit log.
//!
//! Every file operation and command execution during verification goes
//! through a [`Sandbox`], which validates paths against the workspace root,
//! trims the child environment, bounds captured output, enforces a wall
//! timeout, and appends one audit record per operation.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::paths::{resolve_under, PathError};

/// Exit code reported for a run that hit the wall timeout.
pub const TIMEOUT_EXIT_CODE: i32 = 124;

const MAX_OUTPUT_BYTES: usize = 512 * 1024;
const CHILD_PATH: &str = "/usr/local/bin:/usr/bin:/bin";

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error(transparent)]
    Path(#[from] PathError),
    #[error("sandbox unavailable: failed to spawn `{command}`: {source}")]
    Unavailable {
        command: String,
        source: std::io::Error,
    },
    #[error("empty command")]
    EmptyCommand,
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Raw result of one sandboxed command.
#[derive(Debug, Clone)]
pub struct RawExecution {
    pub stdout: String,
    pub stderr: String,
    pub exit_code: i32,
    pub timed_out: bool,
    pub duration: Duration,
}

/// One audit record: a file operation or a command execution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditRecord {
    pub op: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cwd: Option<String>,
}

/// Sandboxed file I/O and command execution, rooted at a workspace path.
pub trait Sandbox: Send + Sync {
    fn root(&self) -> &Path;
    fn write_file(&self, rel: &Path, contents: &str) -> Result<(), SandboxError>;
    fn read_file(&self, rel: &Path) -> Result<String, SandboxError>;
    fn run(
        &self,
        command: &str,
        cwd_rel: Option<&Path>,
        timeout: Duration,
    ) -> Result<RawExecution, SandboxError>;
}

/// Process-isolation backend: direct child processes with a trimmed
/// environment and lexical path validation against the root.
pub struct ProcessSandbox {
    root: PathBuf,
    audit_path: PathBuf,
    audit: Mutex<()>,
}

impl ProcessSandbox {
    pub fn new(root: PathBuf, audit_path: PathBuf) -> Self {
        Self {
            root,
            audit_path,
            audit: Mutex::new(()),
        }
    }

    pub fn audit_path(&self) -> &Path {
        &self.audit_path
    }

    fn append_audit(&self, record: &AuditRecord) -> Result<(), SandboxError> {
        let _guard = self.audit.lock().expect("audit mutex poisoned");
        if let Some(parent) = self.audit_path.parent() {
            fs::create_dir_all(parent).map_err(|source| SandboxError::Io {
                path: parent.display().to_string(),
                source,
            })?;
        }
        let mut file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.audit_path)
            .map_err(|source| SandboxError::Io {
                path: self.audit_path.display().to_string(),
                source,
            })?;
        let line = serde_json::to_string(record).expect("audit record serializes");
        writeln!(file, "{line}").map_err(|source| SandboxError::Io {
            path: self.audit_path.display().to_string(),
            source,
        })?;
        Ok(())
    }
}

impl Sandbox for ProcessSandbox {
    fn root(&self) -> &Path {
        &self.root
    }

    fn write_file(&self, rel: &Path, contents: &str) -> Result<(), SandboxError> {
        let path = resolve_under(&self.root, rel)?;
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|source| SandboxError::Io {
                path: parent.display().to_string(),
                source,
            })?;
        }
        fs::write(&path, contents).map_err(|source| SandboxError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.append_audit(&AuditRecord {
            op: "write".into(),
            path: Some(path.display().to_string()),
            command: None,
            cwd: None,
        })?;
        Ok(())
    }

    fn read_file(&self, rel: &Path) -> Result<String, SandboxError> {
        let path = resolve_under(&self.root, rel)?;
        fs::read_to_string(&path).map_err(|source| SandboxError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    fn run(
        &self,
        command: &str,
        cwd_rel: Option<&Path>,
        timeout: Duration,
    ) -> Result<RawExecution, SandboxError> {
        let argv = split_command(command);
        if argv.is_empty() {
            return Err(SandboxError::EmptyCommand);
        }
        let cwd = match cwd_rel {
            Some(rel) => resolve_under(&self.root, rel)?,
            None => self.root.clone(),
        };
        let home = self.root.join(".sandbox_home");
        fs::create_dir_all(&home).map_err(|source| SandboxError::Io {
            path: home.display().to_string(),
            source,
        })?;

        self.append_audit(&AuditRecord {
            op: "exec".into(),
            path: None,
            command: Some(command.to_string()),
            cwd: Some(cwd.display().to_string()),
        })?;

        let mut cmd = Command::new(&argv[0]);
        cmd.args(&argv[1..])
            .current_dir(&cwd)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .env_clear()
            .env("PATH", CHILD_PATH)
            .env("HOME", &home)
            // Keep child runs reproducible and the workspace free of
            // interpreter cache litter.
            .env("PYTHONDONTWRITEBYTECODE", "1")
            .env("PYTHONHASHSEED", "0");

        let start = Instant::now();
        let mut child = cmd.spawn().map_err(|source| SandboxError::Unavailable {
            command: argv[0].clone(),
            source,
        })?;

        let stdout_handle = child.stdout.take().map(spawn_reader);
        let stderr_handle = child.stderr.take().map(spawn_reader);

        let mut timed_out = false;
        let status = loop {
            match child.try_wait() {
                Ok(Some(status)) => break Some(status),
                Ok(None) => {
                    if start.elapsed() >= timeout {
                        let _ = child.kill();
                        let _ = child.wait();
                        timed_out = true;
                        break None;
                    }
                    thread::sleep(Duration::from_millis(10));
                }
                Err(source) => {
                    return Err(SandboxError::Io {
                        path: argv[0].clone(),
                        source,
                    })
                }
            }
        };
        let duration = start.elapsed();

        let stdout = stdout_handle.map(join_reader).unwrap_or_default();
        let stderr = stderr_handle.map(join_reader).unwrap_or_default();

        let exit_code = if timed_out {
            TIMEOUT_EXIT_CODE
        } else {
            status.and_then(|s| s.code()).unwrap_or(-1)
        };
        Ok(RawExecution {
            stdout,
            stderr,
            exit_code,
            timed_out,
            duration,
        })
    }
}

fn spawn_reader<R: Read + Send + 'static>(mut reader: R) -> thread::JoinHandle<Vec<u8>> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        let mut chunk = [0u8; 8192];
        loop {
            match reader.read(&mut chunk) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    if buf.len() < MAX_OUTPUT_BYTES {
                        let take = n.min(MAX_OUTPUT_BYTES - buf.len());
                        buf.extend_from_slice(&chunk[..take]);
                    }
                }
            }
        }
        buf
    })
}

fn join_reader(handle: thread::JoinHandle<Vec<u8>>) -> String {
    let bytes = handle.join().unwrap_or_default();
    String::from_utf8_lossy(&bytes).into_owned()
}

/// Minimal shell-style splitter: whitespace separates arguments, single and
/// double quotes group, backslash escapes the next character.
pub fn split_command(command: &str) -> Vec<String> {
    let mut argv = Vec::new();
    let mut current = String::new();
    let mut in_single = false;
    let mut in_double = false;
    let mut escaped = false;
    let mut has_token = false;
    for c in command.chars() {
        if escaped {
            current.push(c);
            escaped = false;
            continue;
        }
        match c {
            '\\' if !in_single => escaped = true,
            '\'' if !in_double => {
                in_single = !in_single;
                has_token = true;
            }
            '"' if !in_single => {
                in_double = !in_double;
                has_token = true;
            }
            c if c.is_whitespace() && !in_single && !in_double => {
                if has_token || !current.is_empty() {
                    argv.push(std::mem::take(&mut current));
                    has_token = false;
                }
            }
            c => {
                current.push(c);
                has_token = true;
            }
        }
    }
    if has_token || !current.is_empty() {
        argv.push(current);
    }
    argv
}

/// Loads the audit log.
pub fn read_audit_log(path: &Path) -> Result<Vec<AuditRecord>, SandboxError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path).map_err(|source| SandboxError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut records = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let record: AuditRecord =
            serde_json::from_str(line).map_err(|e| SandboxError::Io {
                path: path.display().to_string(),
                source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
            })?;
        records.push(record);
    }
    Ok(records)
}

/// True when every audited file operation and command stayed under `root`.
pub fn audit_is_confined(records: &[AuditRecord], root: &Path) -> bool {
    let root = root.display().to_string();
    records.iter().all(|r| {
        r.path.as_deref().map(|p| p.starts_with(&root)).unwrap_or(true)
            && r.cwd.as_deref().map(|c| c.starts_with(&root)).unwrap_or(true)
    })
}
